//! Acceptance suite.
//!
//! Prints one `PASS` or `FAIL` line per criterion and exits non-zero when
//! any criterion fails. Synthetic data is generated into temporary
//! directories with fixed seeds.

use std::collections::{BTreeMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use maskforge::annotate::{prepare_session, read_click_log};
use maskforge::evaluate::{mask_metrics, simulate_set, ExperimentReport, MaskMetrics};
use maskforge::features::FeatureVector;
use maskforge::imaging::{load_mask_png, refine_partition, segment_superpixels, Mask, Scale, SlicParams, SuperpixelPartition};
use maskforge::retrieval::{record_visual_similarity, visual_similarity, Dictionary, DictionaryKind, ImageSetRecord};
use maskforge::sparsecode::{omp_encode, tag_probabilities, tag_probability, OmpConfig};
use maskforge::synth::{SynthSpec, DISTRACTOR_COLOR};
use maskforge::{Dataset, PipelineConfig};
use maskforge_service::workspace::{evolve, init, simulate, simulation_dir, Layout};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {:.2} s, limit {} s", elapsed.as_secs_f64(), limit.as_secs()))
}

/// Orthonormal columns from Gram-Schmidt on a random square matrix.
fn orthonormal_basis(d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    while basis.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        for _ in 0..2 {
            for q in &basis {
                let proj: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= proj * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-3 {
            basis.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    basis
}

fn omp_oracle_equivalence() -> Result<String, String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = OmpConfig {
        epsilon: 1e-8,
        max_atoms: 20,
    };
    let mut worst = 0.0f64;
    for case in 0..200 {
        let d = if case % 2 == 0 { 6 } else { 10 };
        let basis = orthonormal_basis(d, &mut rng);
        let dict = Dictionary::from_columns(DictionaryKind::Weak, d, &basis).map_err(|e| e.to_string())?;
        let k = rng.random_range(1..=5);
        let support: Vec<usize> = sample(&mut rng, d, k).into_vec();
        let mut planted = vec![0.0; d];
        for &j in &support {
            let mag = rng.random_range(0.5..2.0);
            planted[j] = if rng.random_bool(0.5) { mag } else { -mag };
        }
        let x: Vec<f64> = (0..d).map(|i| (0..d).map(|j| basis[j][i] * planted[j]).sum()).collect();
        let code = omp_encode(&dict, &FeatureVector::raw(x.clone()), &cfg).map_err(|e| e.to_string())?;

        // Analysis coefficients of an orthonormal basis.
        let analysis: Vec<f64> = basis.iter().map(|q| q.iter().zip(&x).map(|(a, b)| a * b).sum()).collect();
        let mut want = support.clone();
        want.sort_unstable();
        let mut got = code.support.clone();
        got.sort_unstable();
        ensure(got == want, || format!("case {case}: support {got:?}, planted {want:?}"))?;
        ensure(code.coding_length() == k && code.converged, || {
            format!("case {case}: length {} for k = {k}", code.coding_length())
        })?;
        for (&j, &c) in code.support.iter().zip(&code.coefficients) {
            let err = (c - planted[j]).abs().max((c - analysis[j]).abs());
            worst = worst.max(err);
            ensure(err <= 1e-9, || format!("case {case}: atom {j} coefficient off by {err:e}"))?;
        }
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(5))?;
    Ok(format!("200/200 exact, max coefficient error {worst:.1e}, {:.3} s", elapsed.as_secs_f64()))
}

fn tag_probability_suite() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let q = 2.0;
    for case in 0..100 {
        let n = rng.random_range(2..40);
        let lengths: Vec<usize> = (0..n).map(|_| rng.random_range(0..=21)).collect();
        let (min, max) = (*lengths.iter().min().unwrap(), *lengths.iter().max().unwrap());
        let all = tag_probabilities(&lengths, q);
        for (i, &l) in lengths.iter().enumerate() {
            let want = if min == max {
                0.5
            } else {
                let r = (max - l) as f64 / (max - min) as f64;
                r * r
            };
            let single = tag_probability(&lengths, i, q).map_err(|e| e.to_string())?;
            ensure((all[i] - want).abs() <= 1e-12 && single == all[i], || {
                format!("case {case}: L = {l} gives {} / {single}, expected {want}", all[i])
            })?;
            if min != max && l == min {
                ensure(all[i] == 1.0, || format!("case {case}: min maps to {}", all[i]))?;
            }
            if min != max && l == max {
                ensure(all[i] == 0.0, || format!("case {case}: max maps to {}", all[i]))?;
            }
            for (j, &m) in lengths.iter().enumerate() {
                ensure(l > m || all[i] >= all[j], || format!("case {case}: not monotone at {l} vs {m}"))?;
            }
        }
    }
    Ok("100 lists, endpoints exact, monotone, Q = 2".into())
}

fn visual_similarity_identity() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let d = rng.random_range(1..=16);
        let (na, nb) = (rng.random_range(1..=20), rng.random_range(1..=20));
        let mut draw = |n: usize| -> Vec<FeatureVector> {
            (0..n)
                .map(|_| FeatureVector::unit((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()))
                .collect()
        };
        let (a, b) = (draw(na), draw(nb));
        let mut sum = 0.0;
        for x in &a {
            for y in &b {
                sum += x.values().iter().zip(y.values()).map(|(p, q)| p * q).sum::<f64>();
            }
        }
        let pairwise = sum / (a.len() * b.len()) as f64;
        let fast = visual_similarity(&a, &b).map_err(|e| e.to_string())?;
        let record = |name: &str, v: &[FeatureVector]| {
            let ids: Vec<String> = (0..v.len()).map(|i| format!("{name}{i}")).collect();
            let feats: BTreeMap<String, FeatureVector> = ids.iter().cloned().zip(v.iter().cloned()).collect();
            ImageSetRecord::new(name, vec!["t".into()], ids, &feats, false)
        };
        let (ra, rb) = (record("a", &a).map_err(|e| e.to_string())?, record("b", &b).map_err(|e| e.to_string())?);
        let stored = record_visual_similarity(&ra, &rb).map_err(|e| e.to_string())?;
        let err = (fast - pairwise).abs().max((stored - pairwise).abs());
        worst = worst.max(err);
        ensure(err <= 1e-9, || format!("case {case}: differs by {err:e}"))?;
    }
    Ok(format!("50 set pairs, max difference {worst:.1e}"))
}

/// Violations of completeness, 4-connectivity and non-emptiness, checked
/// by flood fill.
fn partition_violations(p: &SuperpixelPartition) -> usize {
    let (w, h) = (p.width() as usize, p.height() as usize);
    let labels = p.labels();
    let r = p.region_count();
    let mut violations = 0;
    if labels.len() != w * h || labels.iter().any(|&l| l as usize >= r) {
        return 1;
    }
    let mut sizes = vec![0usize; r];
    labels.iter().for_each(|&l| sizes[l as usize] += 1);
    violations += sizes.iter().filter(|&&s| s == 0).count();
    if p.all_stats().iter().zip(&sizes).any(|(s, &n)| s.pixel_count != n) {
        violations += 1;
    }
    let mut seen = vec![false; w * h];
    let mut components = vec![0usize; r];
    for start in 0..w * h {
        if seen[start] {
            continue;
        }
        let l = labels[start];
        components[l as usize] += 1;
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if !seen[j] && labels[j] == l {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
    }
    violations + components.iter().filter(|&&c| c > 1).count()
}

fn partition_invariants() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = SynthSpec::end_to_end(21).generate(dir.path()).map_err(|e| e.to_string())?;
    let dataset = Dataset::load(&manifest).map_err(|e| e.to_string())?;
    let cfg = PipelineConfig::default();
    let ids: Vec<String> = dataset.manifest().sets.iter().flat_map(|s| s.images.iter().map(|i| i.id.clone())).take(20).collect();
    let mut violations = 0;
    let mut regions = 0;
    for id in &ids {
        let img = dataset.load_image(id).map_err(|e| e.to_string())?;
        let seg = |k: usize, scale| segment_superpixels(&img, &SlicParams::new(k, scale)).map_err(|e| e.to_string());
        let coarse = seg(cfg.coarse_regions, Scale::Coarse)?;
        let fine = seg(cfg.fine_regions, Scale::Fine)?;
        let refined = refine_partition(&fine, &coarse).map_err(|e| e.to_string())?;
        violations += partition_violations(&coarse) + partition_violations(&fine) + partition_violations(&refined);
        let mut parent = vec![u32::MAX; refined.region_count()];
        for (&r, &c) in refined.labels().iter().zip(coarse.labels()) {
            let slot = &mut parent[r as usize];
            if *slot != u32::MAX && *slot != c {
                violations += 1;
            }
            *slot = c;
        }
        regions += refined.region_count();
    }
    ensure(violations == 0, || format!("{violations} violations"))?;
    Ok(format!("{} images, {regions} refined regions, 0 violations", ids.len()))
}

fn read_report(path: &Path) -> Result<ExperimentReport, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_slice(&bytes).map_err(|e| e.to_string())
}

fn end_to_end() -> Result<String, String> {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = SynthSpec::end_to_end(7).generate(&dir.path().join("data")).map_err(|e| e.to_string())?;
    let layout = Layout::new(dir.path().join("ws"));
    let cfg = PipelineConfig::default();
    init(&manifest, layout.root(), &cfg).map_err(|e| e.to_string())?;
    let summary = simulate(&layout, &[], true, &cfg).map_err(|e| e.to_string())?;
    let out = simulation_dir(&layout, true);
    let dataset = Dataset::load(&manifest).map_err(|e| e.to_string())?;

    let mut min_f = f64::INFINITY;
    let mut images = 0;
    for set in &summary {
        let report = read_report(&out.join(format!("{}.json", set.set_id)))?;
        let knowledge = layout.knowledge(&set.set_id).map_err(|e| e.to_string())?;
        let rerun = simulate_set(&dataset, &knowledge, &set.set_id, true, &cfg).map_err(|e| e.to_string())?;
        for (row, session) in report.per_image.iter().zip(&rerun.sessions) {
            images += 1;
            min_f = min_f.min(row.final_metrics.f_measure);
            ensure(row.final_metrics.f_measure >= 0.93, || {
                format!("{}: final F {:.4}", row.image_id, row.final_metrics.f_measure)
            })?;
            let written = load_mask_png(&out.join("masks").join(format!("{}.png", row.image_id))).map_err(|e| e.to_string())?;
            let events = read_click_log(&out.join("clicks").join(format!("{}.jsonl", row.image_id))).map_err(|e| e.to_string())?;
            let mut replayed = session.fresh();
            replayed.replay_events(&events).map_err(|e| format!("{}: {e}", row.image_id))?;
            ensure(replayed.export_mask() == written && session.export_mask() == written, || {
                format!("{}: replayed mask differs from the exported one", row.image_id)
            })?;
        }
    }
    ensure(images == 20, || format!("expected 20 annotated images, got {images}"))?;
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(180))?;
    let clicks: usize = summary.iter().map(|s| s.total_clicks).sum();
    Ok(format!(
        "{images} images, min final F {min_f:.4}, {clicks} clicks, replay bit-exact, {:.1} s",
        elapsed.as_secs_f64()
    ))
}

/// Share of the distractor patch labelled object by the plain
/// initialization, per target image.
fn distractor_coverage(dataset: &Dataset, layout: &Layout, cfg: &PipelineConfig) -> Result<Vec<f64>, String> {
    let knowledge = layout.knowledge("target").map_err(|e| e.to_string())?;
    let set = dataset.manifest().set("target").ok_or("no target set")?;
    let mut out = Vec::new();
    for entry in &set.images {
        let img = dataset.load_image(&entry.id).map_err(|e| e.to_string())?;
        let s = img.width();
        let (x0, y0, side) = (s / 16, s - s / 16 - s / 4, s / 4);
        let patch = Mask::from_fn(s, s, |x, y| x >= x0 && x < x0 + side && y >= y0 && y < y0 + side);
        let session = prepare_session(&entry.id, &img, &knowledge, None, cfg).map_err(|e| e.to_string())?;
        out.push(session.export_mask().intersection_count(&patch) as f64 / patch.count() as f64);
    }
    Ok(out)
}

fn evolvability() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = SynthSpec::evolvability(7);
    ensure(spec.sets[2].distractor == Some(DISTRACTOR_COLOR), || "target set has no distractor".into())?;
    let manifest = spec.generate(&dir.path().join("data")).map_err(|e| e.to_string())?;
    let layout = Layout::new(dir.path().join("ws"));
    let cfg = PipelineConfig::default();
    init(&manifest, layout.root(), &cfg).map_err(|e| e.to_string())?;
    let dataset = Dataset::load(&manifest).map_err(|e| e.to_string())?;

    let coverage = distractor_coverage(&dataset, &layout, &cfg)?;
    let min_cover = coverage.iter().cloned().fold(f64::INFINITY, f64::min);
    ensure(min_cover >= 0.5, || format!("distractor labelled object on only {min_cover:.2} of its area in some image"))?;

    let report = evolve(&layout, "target", &cfg).map_err(|e| e.to_string())?;
    ensure(report.splits.collect_a.len() == 5 && report.splits.collect_b.len() == 5 && report.splits.verify.len() == 10, || {
        format!("unexpected splits {:?}", report.splits)
    })?;
    let [zero, one, two] = [0, 1, 2].map(|k| report.conditions[k].aggregates);
    ensure(two.total_clicks < zero.total_clicks, || {
        format!("clicks with two splits {} not below {} without", two.total_clicks, zero.total_clicks)
    })?;
    ensure(two.init_f >= zero.init_f, || format!("init F {:.4} below {:.4}", two.init_f, zero.init_f))?;
    Ok(format!(
        "distractor coverage >= {min_cover:.2}; clicks {} / {} / {}; init F {:.4} / {:.4} / {:.4} (zero / one / two splits)",
        zero.total_clicks, one.total_clicks, two.total_clicks, zero.init_f, one.init_f, two.init_f
    ))
}

fn metric_correctness() -> Result<String, String> {
    let m = |f: &dyn Fn(u32, u32) -> bool| Mask::from_fn(10, 10, f);
    // (predicted, truth, tp, fp, fn, P, R, F)
    type Case = (Mask, Mask, u64, u64, u64, f64, f64, f64);
    let cases: Vec<(&str, Case)> = vec![
        ("identical", (m(&|_, y| y < 5), m(&|_, y| y < 5), 50, 0, 0, 1.0, 1.0, 1.0)),
        ("empty prediction", (m(&|_, _| false), m(&|_, y| y < 5), 0, 0, 50, 0.0, 0.0, 0.0)),
        ("both empty", (m(&|_, _| false), m(&|_, _| false), 0, 0, 0, 0.0, 0.0, 0.0)),
        ("empty truth", (m(&|_, _| true), m(&|_, _| false), 0, 100, 0, 0.0, 0.0, 0.0)),
        ("half inside", (m(&|_, y| y < 5), m(&|_, _| true), 50, 0, 50, 1.0, 0.5, 2.0 / 3.0)),
        ("disjoint", (m(&|x, _| x < 3), m(&|x, _| x > 6), 0, 30, 30, 0.0, 0.0, 0.0)),
        ("over-segmented", (m(&|_, y| y < 6), m(&|_, y| y < 4), 40, 20, 0, 2.0 / 3.0, 1.0, 0.8)),
        ("shifted band", (m(&|_, y| (3..8).contains(&y)), m(&|_, y| y < 5), 20, 30, 30, 0.4, 0.4, 0.4)),
        ("split columns", (m(&|x, _| x == 0 || x == 9), m(&|x, _| x < 2), 10, 10, 10, 0.5, 0.5, 0.5)),
        ("single pixel truth", (m(&|_, _| true), m(&|x, y| x == 4 && y == 4), 1, 99, 0, 0.01, 1.0, 2.0 / 101.0)),
    ];
    for (name, (pred, truth, tp, fp, fn_, p, r, f)) in &cases {
        let got = mask_metrics(pred, truth).map_err(|e| e.to_string())?;
        let want = MaskMetrics {
            precision: *p,
            recall: *r,
            f_measure: *f,
            tp: *tp,
            fp: *fp,
            fn_: *fn_,
        };
        ensure(got == want, || format!("{name}: got {got:?}, expected {want:?}"))?;
    }
    Ok(format!("{} mask pairs exact", cases.len()))
}

fn snapshot(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(out)
}

fn determinism() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = PipelineConfig::default();
    let mut runs = Vec::new();
    for name in ["first", "second"] {
        let root = dir.path().join(name);
        let manifest = SynthSpec::end_to_end(cfg.seed).generate(&root.join("data")).map_err(|e| e.to_string())?;
        let layout = Layout::new(root.join("ws"));
        init(&manifest, layout.root(), &cfg).map_err(|e| e.to_string())?;
        simulate(&layout, &[], true, &cfg).map_err(|e| e.to_string())?;
        let first = snapshot(&simulation_dir(&layout, true))?;
        simulate(&layout, &[], true, &cfg).map_err(|e| e.to_string())?;
        let again = snapshot(&simulation_dir(&layout, true))?;
        ensure(first == again, || format!("{name}: a repeated simulate changed its output"))?;
        runs.push(first);
    }
    ensure(runs[0] == runs[1], || "independent runs differ".into())?;
    let masks = runs[0].keys().filter(|k| k.ends_with(".png")).count();
    let reports = runs[0].keys().filter(|k| k.ends_with(".json") || k.ends_with(".csv")).count();
    Ok(format!("{reports} reports and {masks} masks byte-identical across 4 runs"))
}

fn main() -> ExitCode {
    let checks: [(&str, Check); 8] = [
        ("omp-oracle-equivalence", omp_oracle_equivalence),
        ("tag-probability-endpoints-monotonicity", tag_probability_suite),
        ("visual-similarity-identity", visual_similarity_identity),
        ("partition-invariants", partition_invariants),
        ("end-to-end-oracle-run", end_to_end),
        ("evolvability", evolvability),
        ("metric-correctness", metric_correctness),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
