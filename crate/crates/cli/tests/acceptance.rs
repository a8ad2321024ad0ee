//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits nonzero if any criterion fails.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use facemorph_core::synthetic::{add_noise, gaussian_bump, random_cloud, random_rotation, random_translation, rms};
use facemorph_core::{
    apply_transform, correspondence_targets, gmap, gmap_ma, gmap_mamf, morph, quadrant_classify, register, save_ply,
    threshold_at_fmr, FrsThreshold, FtarTable, MorphConfig, Point, PointCloud, Quadrant, RegistrationParams,
    ScoreRecord, SimilarityTransform,
};
use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn self_registration() -> Verdict {
    let mut worst = [0.0f64; 4];
    let mut slowest = Duration::ZERO;
    for seed in 0..20 {
        let cloud = random_cloud(&mut rng(1000 + seed), 300, "self");
        let start = Instant::now();
        let out = register(&cloud, &cloud, &RegistrationParams::default()).expect("registration runs");
        slowest = slowest.max(start.elapsed());
        let vmax = out.displacement.iter().map(|v| v.amax()).fold(0.0, f64::max);
        let errs = [
            vmax,
            (out.transform.rotation - Matrix3::identity()).norm(),
            (out.transform.scale - 1.0).abs(),
            out.transform.translation.norm(),
        ];
        for (w, e) in worst.iter_mut().zip(errs) {
            *w = w.max(e);
        }
    }
    let pass = worst.iter().all(|&e| e <= 0.02) && slowest <= Duration::from_secs(10);
    verdict(
        pass,
        format!(
            "max |v|inf={:.2e} |R-I|F={:.2e} |s-1|={:.2e} |t|={:.2e}; slowest run {:.2?}",
            worst[0], worst[1], worst[2], worst[3], slowest
        ),
    )
}

fn rigid_recovery() -> Verdict {
    let mut worst = 0.0f64;
    let mut converged = 0;
    for seed in 0..20 {
        let mut r = rng(2000 + seed);
        let source = random_cloud(&mut r, 300, "src");
        let rot = random_rotation(&mut r, 30f64.to_radians());
        let shift = random_translation(&mut r, 0.5);
        let moved: Vec<Point> = source.vertices().iter().map(|p| rot * p + shift).collect();
        let noisy = add_noise(&mut r, &moved, 0.005);
        let target = PointCloud::new("tgt", noisy.clone(), source.colors().to_vec()).unwrap();
        let out = register(&source, &target, &RegistrationParams::default()).expect("registration runs");
        worst = worst.max(rms(out.aligned_source_original_units().vertices(), &noisy));
        converged += usize::from(out.converged);
    }
    verdict(
        worst <= 0.05 && converged >= 18,
        format!("worst RMS {worst:.4}; {converged}/20 converged"),
    )
}

fn nonrigid_recovery() -> Verdict {
    let mut worst_post = 0.0f64;
    let mut worst_ratio = 0.0f64;
    for seed in 0..5 {
        let mut r = rng(3000 + seed);
        let source = random_cloud(&mut r, 300, "src");
        let center = source.vertices()[r.random_range(0..source.len())];
        let dir = random_rotation(&mut r, std::f64::consts::PI) * Point::z();
        let bumped = gaussian_bump(source.vertices(), &center, &dir, 0.4, 0.1);
        let target = PointCloud::new("tgt", bumped.clone(), source.colors().to_vec()).unwrap();
        let pre = rms(source.vertices(), &bumped);
        let out = register(&source, &target, &RegistrationParams::default()).expect("registration runs");
        let post = rms(out.aligned_source_original_units().vertices(), &bumped);
        worst_post = worst_post.max(post);
        worst_ratio = worst_ratio.max(post / pre);
    }
    verdict(
        worst_post <= 0.03 && worst_ratio <= 0.5,
        format!("worst post RMS {worst_post:.4}; worst post/pre {worst_ratio:.3}"),
    )
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

fn arithmetic_oracles() -> Verdict {
    let mut r = rng(4000);
    let mut failures = 0;
    for _ in 0..1000 {
        let y = Point::new(r.random_range(-2.0..2.0), r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
        let v = Point::new(r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), r.random_range(-0.5..0.5));
        let transform = SimilarityTransform {
            scale: r.random_range(0.1..3.0),
            rotation: *random_rotation(&mut r, std::f64::consts::PI).matrix(),
            translation: Point::new(r.random_range(-5.0..5.0), r.random_range(-5.0..5.0), r.random_range(-5.0..5.0)),
        };
        let color = [r.random(), r.random(), r.random()];
        let src = PointCloud::new("s", vec![y], vec![color]).unwrap();
        let moved = apply_transform(&src, &transform, &[v]).unwrap();
        let got = moved.vertices()[0];
        for i in 0..3 {
            let mut expect = transform.translation[i];
            for j in 0..3 {
                expect += transform.scale * transform.rotation[(i, j)] * (y[j] + v[j]);
            }
            failures += usize::from(!close(got[i], expect));
        }
        failures += usize::from(moved.colors()[0] != color);

        let alpha: f64 = r.random();
        let partner = Point::new(r.random_range(-2.0..2.0), r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
        let partner_color = [r.random(), r.random(), r.random()];
        let blended = morph(&moved, &[partner], &[partner_color], "t", &MorphConfig { alpha }).unwrap();
        for k in 0..3 {
            failures += usize::from(!close(blended.vertices()[0][k], alpha * got[k] + (1.0 - alpha) * partner[k]));
            failures += usize::from(!close(
                blended.colors()[0][k],
                alpha * color[k] + (1.0 - alpha) * partner_color[k],
            ));
        }
    }
    verdict(failures == 0, format!("{failures} mismatches over 1000 cases"))
}

fn morph_endpoints() -> Verdict {
    let mut r = rng(5000);
    let source = random_cloud(&mut r, 200, "a");
    let target = random_cloud(&mut r, 180, "b");
    let out = register(&source, &target, &RegistrationParams::default()).expect("registration runs");
    let pst1 = out.aligned_source();
    let (coords, colors) = correspondence_targets(&out.state, &out.target).unwrap();
    let blend = |alpha: f64| morph(&pst1, &coords, &colors, "b", &MorphConfig { alpha }).unwrap();

    let one = blend(1.0);
    let zero = blend(0.0);
    let half = blend(0.5);
    let end1 = one.vertices() == pst1.vertices() && one.colors() == pst1.colors();
    let end0 = zero.vertices() == coords.as_slice() && zero.colors() == colors.as_slice();
    let mid = (0..pst1.len()).all(|m| {
        half.vertices()[m] == pst1.vertices()[m] * 0.5 + coords[m] * 0.5
            && (0..3).all(|k| half.colors()[m][k] == 0.5 * pst1.colors()[m][k] + 0.5 * colors[m][k])
    });
    verdict(end1 && end0 && mid, format!("alpha=1 exact: {end1}; alpha=0 exact: {end0}; midpoint exact: {mid}"))
}

/// A complete random score table.
struct Table {
    records: Vec<ScoreRecord>,
    thresholds: Vec<FrsThreshold>,
    ftar: FtarTable,
    frs: Vec<String>,
    morphs: Vec<(String, String)>,
    attempts: u32,
}

fn grid(r: &mut ChaCha8Rng) -> f64 {
    f64::from(r.random_range(0..=10u32)) / 10.0
}

fn random_table(r: &mut ChaCha8Rng, with_ftar: bool) -> Table {
    let n_frs = r.random_range(1..=5);
    let n_morphs = r.random_range(1..=20);
    let attempts = r.random_range(1..=5u32);
    let n_types = r.random_range(1..=3);
    let frs: Vec<String> = (0..n_frs).map(|l| format!("frs{l}")).collect();
    let morphs: Vec<(String, String)> = (0..n_morphs)
        .map(|i| (format!("type{}", r.random_range(0..n_types)), format!("m{i}")))
        .collect();
    let mut records = Vec::new();
    for l in &frs {
        for (ty, id) in &morphs {
            for a in 1..=attempts {
                records.push(ScoreRecord::new(id.clone(), ty.clone(), l.clone(), a, vec![grid(r), grid(r)]).unwrap());
            }
        }
    }
    let thresholds = frs
        .iter()
        .map(|l| FrsThreshold {
            frs_id: l.clone(),
            tau: grid(r),
            fmr_target: 0.001,
            saturated: false,
        })
        .collect();
    let mut ftar = FtarTable::new();
    if with_ftar {
        for l in &frs {
            for a in 1..=attempts {
                if r.random_bool(0.7) {
                    ftar.insert(a, l, r.random()).unwrap();
                }
            }
        }
    }
    Table {
        records,
        thresholds,
        ftar,
        frs,
        morphs,
        attempts,
    }
}

/// Direct cell enumeration: average over types of the per-type mean over
/// (morph, attempt) of the minimum over FRS of indicator times (1 - FTAR).
fn oracle(t: &Table, frs: &[String], collapse_types: bool, use_ftar: bool) -> f64 {
    let types: BTreeSet<String> = if collapse_types {
        ["all".to_string()].into()
    } else {
        t.morphs.iter().map(|(ty, _)| ty.clone()).collect()
    };
    let mut per_type = Vec::new();
    for ty in &types {
        let members: Vec<&String> = t
            .morphs
            .iter()
            .filter(|(mt, _)| collapse_types || mt == ty)
            .map(|(_, id)| id)
            .collect();
        let mut total = 0.0;
        for id in &members {
            for a in 1..=t.attempts {
                let mut cell = f64::INFINITY;
                for l in frs {
                    let rec = t
                        .records
                        .iter()
                        .find(|r| &r.morph_id == *id && &r.frs_id == l && r.attempt == a)
                        .unwrap();
                    let tau = t.thresholds.iter().find(|th| &th.frs_id == l).unwrap().tau;
                    let hit = if rec.subject_scores.iter().all(|&s| s > tau) { 1.0 } else { 0.0 };
                    let keep = if use_ftar { 1.0 - t.ftar.get(a, l) } else { 1.0 };
                    cell = cell.min(hit * keep);
                }
                total += cell;
            }
        }
        per_type.push(total / (members.len() as f64 * f64::from(t.attempts)));
    }
    100.0 * per_type.iter().sum::<f64>() / per_type.len() as f64
}

fn fixture_records(frs: &str) -> Vec<ScoreRecord> {
    [("A", 1, 0.6, 0.7), ("A", 2, 0.6, 0.4), ("B", 1, 0.8, 0.9), ("B", 2, 0.55, 0.51)]
        .iter()
        .map(|&(m, a, s1, s2)| ScoreRecord::new(m, "bcpd", frs, a, vec![s1, s2]).unwrap())
        .collect()
}

fn gmap_oracle_equivalence() -> Verdict {
    let fixture = fixture_records("f");
    let thr = FrsThreshold {
        frs_id: "f".into(),
        tau: 0.5,
        fmr_target: 0.001,
        saturated: false,
    };
    let mut half = FtarTable::new();
    half.insert(2, "f", 0.5).unwrap();
    let fixtures_ok = gmap(&fixture, std::slice::from_ref(&thr), &FtarTable::new()) == Ok(75.0)
        && gmap_ma(&fixture, &thr) == Ok(75.0)
        && gmap(&fixture, std::slice::from_ref(&thr), &half) == Ok(62.5);

    let mut r = rng(6000);
    let mut mismatches = 0;
    for _ in 0..200 {
        let t = random_table(&mut r, true);
        let got = gmap(&t.records, &t.thresholds, &t.ftar).unwrap();
        mismatches += usize::from(!close(got, oracle(&t, &t.frs, false, true)));
        for (l, th) in t.frs.iter().zip(&t.thresholds) {
            let got = gmap_ma(&t.records, th).unwrap();
            mismatches += usize::from(!close(got, oracle(&t, std::slice::from_ref(l), true, false)));
        }
        if t.frs.len() >= 2 {
            let got = gmap_mamf(&t.records, &t.thresholds, &t.ftar).unwrap();
            mismatches += usize::from(!close(got, oracle(&t, &t.frs, true, true)));
        }
    }
    verdict(
        fixtures_ok && mismatches == 0,
        format!("75.0/62.5 fixtures: {fixtures_ok}; {mismatches} mismatches over 200 tables"),
    )
}

fn metric_structure() -> Verdict {
    let mut r = rng(7000);
    let (mut bound_fail, mut quad_fail, mut mono_fail) = (0, 0, 0);
    for _ in 0..200 {
        let t = random_table(&mut r, false);
        let ma: Vec<f64> = t.thresholds.iter().map(|th| gmap_ma(&t.records, th).unwrap()).collect();
        if t.frs.len() >= 2 {
            let mamf = gmap_mamf(&t.records, &t.thresholds, &FtarTable::new()).unwrap();
            let min_ma = ma.iter().copied().fold(f64::INFINITY, f64::min);
            bound_fail += usize::from(mamf > min_ma + 1e-12);
        }
        for (th, &value) in t.thresholds.iter().zip(&ma) {
            let own: Vec<&ScoreRecord> = t.records.iter().filter(|rec| rec.frs_id == th.frs_id).collect();
            let q1 = own
                .iter()
                .filter(|rec| quadrant_classify(rec, th) == Ok(Quadrant::I))
                .count();
            quad_fail += usize::from(!close(q1 as f64 / own.len() as f64, value / 100.0));

            let higher = FrsThreshold {
                tau: th.tau + 0.1,
                ..th.clone()
            };
            mono_fail += usize::from(gmap_ma(&t.records, &higher).unwrap() > value);
        }
    }
    verdict(
        bound_fail + quad_fail + mono_fail == 0,
        format!(
            "MAMF above min MA: {bound_fail}; quadrant-I mismatch: {quad_fail}; non-monotone in tau: {mono_fail}"
        ),
    )
}

fn pipeline_determinism() -> Verdict {
    let dir = tempfile::tempdir().expect("temp dir");
    let root = dir.path();
    let mut r = rng(8000);
    for i in 0..4 {
        let cloud = random_cloud(&mut r, 250, &format!("s{i}"));
        save_ply(&cloud, root.join(format!("s{i}.ply"))).unwrap();
    }
    fs::write(
        root.join("pairs.csv"),
        "subject_a,subject_b,morph_id,alpha\ns0.ply,s1.ply,m01,\ns2.ply,s3.ply,m23,0.4\ns1.ply,s3.ply,m13,\n",
    )
    .unwrap();
    let run = |out: &str| {
        Command::new(env!("CARGO_BIN_EXE_facemorph"))
            .args(["pipeline", "pairs.csv", "--seed", "42", "--downsample", "200", "--out", out])
            .current_dir(root)
            .output()
            .expect("binary runs")
    };
    let first = run("run1");
    let second = run("run2");
    if !first.status.success() || !second.status.success() {
        return verdict(false, format!("pipeline failed: {}", String::from_utf8_lossy(&first.stderr)));
    }
    let files = |d: &Path| -> Vec<String> {
        let mut names: Vec<String> = fs::read_dir(d)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        names
    };
    let compared = |d: &Path| -> Vec<String> {
        files(d)
            .into_iter()
            .filter(|n| n.ends_with(".ply") || n == "manifest.csv")
            .collect()
    };
    let names = compared(&root.join("run1"));
    let same_names = names == compared(&root.join("run2"));
    let differing: Vec<&String> = names
        .iter()
        .filter(|n| fs::read(root.join("run1").join(n)).ok() != fs::read(root.join("run2").join(n)).ok())
        .collect();
    let morphs = names.iter().filter(|n| n.starts_with('m') && n.ends_with(".ply")).count();
    verdict(
        same_names && differing.is_empty() && morphs == 3,
        format!("{morphs} morph PLYs and manifest compared; differing files: {differing:?}"),
    )
}

fn exhaustive_threshold(scores: &[f64], fmr: f64) -> (f64, bool) {
    let mut candidates: Vec<f64> = scores.to_vec();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    for &tau in &candidates {
        let at_or_above = scores.iter().filter(|&&s| s >= tau).count();
        if at_or_above as f64 / scores.len() as f64 <= fmr {
            return (tau, false);
        }
    }
    (*candidates.last().unwrap(), true)
}

fn threshold_oracle() -> Verdict {
    let mut r = rng(9000);
    let mut mismatches = 0;
    for _ in 0..100 {
        let n = r.random_range(1..=2000);
        let ties = r.random_bool(0.5);
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if ties {
                    f64::from(r.random_range(0..50u32)) / 50.0
                } else {
                    r.random()
                }
            })
            .collect();
        let fmr = [0.001, 0.01, 0.05, 0.1, 0.5][r.random_range(0..5)];
        let got = threshold_at_fmr("f", &scores, fmr).unwrap();
        let (tau, saturated) = exhaustive_threshold(&scores, fmr);
        mismatches += usize::from(got.tau != tau || got.saturated != saturated);
    }
    verdict(mismatches == 0, format!("{mismatches} mismatches over 100 score sets"))
}

fn main() -> ExitCode {
    type Check = fn() -> Verdict;
    let criteria: [(&str, Check); 9] = [
        ("self-registration", self_registration),
        ("rigid recovery", rigid_recovery),
        ("non-rigid recovery", nonrigid_recovery),
        ("transform and blend arithmetic", arithmetic_oracles),
        ("morph endpoints", morph_endpoints),
        ("G-MAP oracle equivalence", gmap_oracle_equivalence),
        ("metric structure", metric_structure),
        ("pipeline determinism", pipeline_determinism),
        ("threshold oracle", threshold_oracle),
    ];
    let suite = Instant::now();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = check();
        failed += usize::from(!v.pass);
        println!(
            "{} criterion {} ({name}): {} [{:.2?}]",
            if v.pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail,
            start.elapsed()
        );
    }
    println!("acceptance: {}/{} passed in {:.2?}", criteria.len() - failed, criteria.len(), suite.elapsed());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
