//! Acceptance criteria, one pass/fail line each. Runs without the libtest
//! harness so the report prints under a plain `cargo test`.

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use pointcam::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use pointcam::data::{self, TriangleMesh};
use pointcam::geometry::{self, Point3, PointCloud};
use pointcam::metrics::{self, ScoreDump};
use pointcam::network::{self, BackboneConfig, Model, ModelConfig, Task, UpeConfig, UpeModule};
use pointcam::ups::{self, UpsParams};
use pointcam::Error;
use pointcam_cli::commands;
use pointcam_cli::experiment::{self, ExperimentConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> Result<(), String> {
    ensure(elapsed < Duration::from_secs(limit_secs), || {
        format!("took {:.1}s, limit {limit_secs}s", elapsed.as_secs_f64())
    })
}

// ---------------------------------------------------------------------------
// Exhaustive metric oracles.

fn oracle_counts(d: &ScoreDump, t: f64) -> (usize, usize) {
    let tp = d.records.iter().filter(|r| r.is_unknown && r.score >= t).count();
    let fp = d.records.iter().filter(|r| !r.is_unknown && r.score >= t).count();
    (tp, fp)
}

fn oracle_thresholds(d: &ScoreDump) -> Vec<f64> {
    let mut t: Vec<f64> = d.records.iter().map(|r| r.score).collect();
    t.extend([f64::INFINITY, f64::NEG_INFINITY]);
    t.sort_by(|a, b| b.total_cmp(a));
    t.dedup();
    t
}

fn oracle_auroc(d: &ScoreDump) -> f64 {
    let (u, k) = d.class_counts();
    let mut twice = 0usize;
    for a in d.records.iter().filter(|r| r.is_unknown) {
        for b in d.records.iter().filter(|r| !r.is_unknown) {
            twice += match a.score.partial_cmp(&b.score).unwrap() {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            };
        }
    }
    twice as f64 / (2 * u * k) as f64
}

fn oracle_aupr(d: &ScoreDump) -> f64 {
    let (u, _) = d.class_counts();
    let (mut ap, mut prev) = (0.0, 0.0);
    for t in oracle_thresholds(d) {
        let (tp, fp) = oracle_counts(d, t);
        if tp + fp == 0 {
            continue;
        }
        let recall = tp as f64 / u as f64;
        ap += (recall - prev) * (tp as f64 / (tp + fp) as f64);
        prev = recall;
    }
    ap
}

fn oracle_fpr95(d: &ScoreDump) -> f64 {
    let (u, k) = d.class_counts();
    oracle_thresholds(d)
        .into_iter()
        .map(|t| oracle_counts(d, t))
        .filter(|&(tp, _)| tp as f64 / u as f64 >= 0.95)
        .map(|(_, fp)| fp as f64 / k as f64)
        .fold(f64::INFINITY, f64::min)
}

fn oracle_detection_error(d: &ScoreDump) -> f64 {
    let (u, k) = d.class_counts();
    oracle_thresholds(d)
        .into_iter()
        .map(|t| oracle_counts(d, t))
        .map(|(tp, fp)| 0.5 * (1.0 - tp as f64 / u as f64) + 0.5 * (fp as f64 / k as f64))
        .fold(f64::INFINITY, f64::min)
}

fn random_dump(rng: &mut ChaCha8Rng, max_units: usize) -> ScoreDump {
    let n = rng.random_range(2..=max_units);
    // Coarse grids produce ties; fine grids mostly distinct scores.
    let levels = [5u32, 50, 1_000_000][rng.random_range(0..3)];
    let mut flags: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
    flags[0] = true;
    flags[1] = false;
    let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
    ScoreDump::from_parts(&scores, &flags).unwrap()
}

fn metric_oracle_equivalence() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..1000 {
        let d = random_dump(&mut rng, 200);
        let pairs = [
            ("auroc", metrics::auroc(&d).unwrap(), oracle_auroc(&d)),
            ("aupr", metrics::aupr(&d).unwrap(), oracle_aupr(&d)),
            ("fpr_at_95_tpr", metrics::fpr_at_tpr(&d, 0.95).unwrap(), oracle_fpr95(&d)),
            ("detection_error", metrics::detection_error(&d).unwrap(), oracle_detection_error(&d)),
        ];
        for (name, got, want) in pairs {
            ensure(got.to_bits() == want.to_bits(), || format!("dump {i}: {name} {got} vs oracle {want}"))?;
        }
    }
    within(start.elapsed(), 10)?;
    Ok(format!("1000 dumps bit-equal in {:.2}s", start.elapsed().as_secs_f64()))
}

// ---------------------------------------------------------------------------

fn gradient_check() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 16;
    let mut backbone = BackboneConfig::new(3, Task::Segmentation);
    backbone.level_widths = vec![6, 8];
    backbone.level_fractions = vec![1.0, 0.5];
    backbone.head_hidden = 7;
    let mut model = Model::new(
        ModelConfig {
            backbone,
            upe: Some(UpeConfig {
                hidden: 5,
                ..UpeConfig::new(1.0)
            }),
        },
        &mut rng,
    )
    .unwrap();
    let coords: Vec<Point3> = (0..n)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
    let refs: Vec<f64> = labels.iter().map(|&l| if l == 3 { 1.0 } else { 0.0 }).collect();

    let loss = |m: &Model, g: &mut Graph| -> Var {
        let out = m.forward(g, &coords).unwrap();
        m.total_loss(g, &out, &labels, &refs).unwrap().total
    };

    model.params.zero_grad();
    let mut g = Graph::new();
    let l = loss(&model, &mut g);
    g.backward(l, &mut model.params).unwrap();

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();
    let mut checked = 0;
    let ids: Vec<ParamId> = model.params.ids().collect();
    for id in ids {
        for i in 0..model.params.get(id).value.len() {
            let orig = model.params.get(id).value.data()[i];
            let eval_at = |v: f64, m: &mut Model| {
                m.params.get_mut(id).value.data_mut()[i] = v;
                let mut g = Graph::new();
                let l = loss(m, &mut g);
                g.value(l).item()
            };
            let up = eval_at(orig + h, &mut model);
            let down = eval_at(orig - h, &mut model);
            model.params.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = model.params.get(id).grad.as_ref().unwrap().data()[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            if rel > worst {
                worst = rel;
                worst_at = format!("{}[{i}]", model.params.get(id).name);
            }
            checked += 1;
        }
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:.3e} at {worst_at}"))?;
    within(start.elapsed(), 30)?;
    Ok(format!("{checked} parameters, max relative error {worst:.2e}"))
}

// ---------------------------------------------------------------------------

fn ups_contract() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..500 {
        let n = rng.random_range(8..600);
        let coords: Vec<Point3> = (0..n)
            .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..0.5)])
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..5)).collect();
        let cloud = PointCloud::new(coords, Some(labels.clone()), "c").unwrap();
        let beta = rng.random_range(0.0..0.6);
        let params = UpsParams::segmentation_default().with_beta(beta, beta);
        let seed = rng.random::<u64>();
        let out = ups::ups_segmentation(&cloud, &params, 5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let again = ups::ups_segmentation(&cloud, &params, 5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let fail = |what: &str| format!("cloud {trial} (N={n}, beta={beta:.3}): {what}");

        ensure(out == again, || fail("not deterministic for a fixed seed"))?;
        ensure(out.len() == n && out.task_labels.len() == n && out.ref_scores.len() == n, || fail("size changed"))?;
        let k = ups::selection_count(beta, n);
        ensure(out.selected.len() == k, || fail(&format!("{} selected, expected {k}", out.selected.len())))?;
        let mut is_sel = vec![false; n];
        for &i in &out.selected {
            is_sel[i] = true;
        }
        for i in 0..n {
            if is_sel[i] {
                ensure(out.task_labels[i] == 5 && out.ref_scores[i] == 1.0, || fail("selected row not marked unknown"))?;
            } else {
                ensure(
                    out.coords[i] == cloud.coords[i] && out.task_labels[i] == labels[i] && out.ref_scores[i] == 0.0,
                    || fail(&format!("untouched row {i} changed")),
                )?;
            }
        }
        if k == 0 {
            continue;
        }
        let xf = out.transform.ok_or_else(|| fail("no transform recorded"))?;
        let r = xf.rotation;
        ensure(r.orthogonality_error() < 1e-9, || fail("rotation not orthogonal"))?;
        ensure((r.determinant() - 1.0).abs() < 1e-9, || fail("rotation determinant is not 1"))?;
        for (&dst, &src) in out.selected.iter().zip(&out.source_rows) {
            let want = xf.apply(cloud.coords[src]);
            let got = out.coords[dst];
            ensure(geometry::dist2(want, got) < 1e-20, || fail("moved point is not R*p + T"))?;
        }
        let moved: Vec<Point3> = out.selected.iter().map(|&i| out.coords[i]).collect();
        let c = geometry::centroid(&moved);
        ensure(geometry::aabb(&cloud).contains(c, 1e-9), || fail("moved centroid outside the bounding box"))?;
    }
    within(start.elapsed(), 10)?;
    Ok(format!("500 clouds in {:.2}s", start.elapsed().as_secs_f64()))
}

// ---------------------------------------------------------------------------

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn fusion_run(rng: &mut ChaCha8Rng, levels: usize, point_guided: bool) -> (Graph, network::UpeOutput, usize) {
    let n = rng.random_range(1..64);
    let widths: Vec<usize> = (0..levels).map(|_| rng.random_range(1..12)).collect();
    let mut store = ParamStore::new();
    let upe = UpeModule::new(
        &mut store,
        UpeConfig {
            hidden: rng.random_range(1..16),
            point_guided,
            ..UpeConfig::new(1.0)
        },
        &widths,
        rng,
    );
    let mut g = Graph::new();
    let q = g.constant(random_tensor(rng, n, 3));
    let feats: Vec<Var> = widths.iter().map(|&c| g.constant(random_tensor(rng, n, c))).collect();
    let out = network::upe_forward(&mut g, &store, q, &feats, &upe).unwrap();
    (g, out, n)
}

fn fusion_contract() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..100 {
        let m = rng.random_range(1..5);
        let (g, out, n) = fusion_run(&mut rng, m, true);
        let w = g.value(out.weights);
        for r in 0..n {
            let s: f64 = w.row(r).iter().sum();
            ensure((s - 1.0).abs() <= 1e-9, || format!("trial {trial}: weight row {r} sums to {s}"))?;
        }
    }
    for trial in 0..100 {
        let (g, out, _) = fusion_run(&mut rng, 1, true);
        ensure(g.value(out.scores).data() == g.value(out.level_scores[0]).data(), || {
            format!("trial {trial}: single-level fused score differs from the level score")
        })?;
    }
    for trial in 0..100 {
        let m = rng.random_range(1..5);
        let (g, out, n) = fusion_run(&mut rng, m, false);
        for r in 0..n {
            let mean = (0..m).map(|j| g.value(out.level_scores[j]).get(r, 0)).sum::<f64>() / m as f64;
            let x = g.value(out.scores).get(r, 0);
            ensure((x - mean).abs() <= 1e-12, || format!("trial {trial}: unguided score {x} vs mean {mean}"))?;
        }
    }
    Ok("weight rows, single-level collapse and unguided mean hold over 100 trials each".into())
}

// ---------------------------------------------------------------------------

fn desk_experiment() -> Check {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let outcomes: Vec<_> = (0..3).map(|seed| experiment::run(&cfg, seed)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let med = |f: fn(&experiment::ExperimentOutcome) -> f64| {
        let mut v: Vec<f64> = outcomes.iter().map(f).collect();
        experiment::median(&mut v)
    };
    let upe = med(|o| o.upe_auroc);
    let msp = med(|o| o.baseline_msp_auroc);
    let acc_pc = med(|o| o.pointcam_accuracy);
    let acc_base = med(|o| o.baseline_accuracy);
    let summary = format!(
        "median AUROC upe {upe:.3} vs msp baseline {msp:.3}; accuracy {acc_pc:.3} vs baseline {acc_base:.3}; {:.0}s",
        start.elapsed().as_secs_f64()
    );
    ensure(upe > msp, || format!("UPE does not beat the baseline: {summary}"))?;
    ensure(upe >= 0.80, || format!("UPE AUROC below 0.80: {summary}"))?;
    ensure(acc_pc >= acc_base - 0.03, || format!("accuracy more than 3 points below the baseline: {summary}"))?;
    within(start.elapsed(), 600)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------

fn monotone_invariance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..100 {
        let n = rng.random_range(2..=150);
        let mut flags: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        flags[0] = true;
        flags[1] = false;
        // Grid values keep distinct scores distinct after the transforms.
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..1000) as f64 / 1000.0).collect();
        let slope = rng.random_range(0.1..10.0);
        let shift = rng.random_range(-5.0..5.0);
        let base = ScoreDump::from_parts(&scores, &flags).unwrap();
        let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let affine: Vec<f64> = scores.iter().map(|s| slope * s + shift).collect();
        for (name, t) in [("exp", exp), ("affine", affine)] {
            let d = ScoreDump::from_parts(&t, &flags).unwrap();
            let same = metrics::auroc(&d).unwrap() == metrics::auroc(&base).unwrap()
                && metrics::aupr(&d).unwrap() == metrics::aupr(&base).unwrap()
                && metrics::fpr_at_tpr(&d, 0.95).unwrap() == metrics::fpr_at_tpr(&base, 0.95).unwrap()
                && metrics::detection_error(&d).unwrap() == metrics::detection_error(&base).unwrap();
            ensure(same, || format!("dump {i}: metrics changed under the {name} transform"))?;
        }
    }
    Ok("100 dumps, exp and affine transforms, exact".into())
}

// ---------------------------------------------------------------------------

fn parser_golden() -> Check {
    let mesh = TriangleMesh::new(
        vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.1, 0.2, 0.30000000000000004]],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .unwrap();
    let back = data::parse_off(&data::write_off(&mesh)).map_err(|e| e.to_string())?;
    ensure(back == mesh, || "OFF round trip changed the mesh".into())?;

    let glued = "OFF4 2 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\n4 0 1 2 3\n";
    let m = data::parse_off(glued).map_err(|e| e.to_string())?;
    ensure(m.vertices.len() == 4 && m.faces.len() == 3, || "glued header parsed wrongly".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let coords: Vec<Point3> = (0..200).map(|_| [rng.random::<f64>() - 0.5, rng.random::<f64>() * 1e6, -rng.random::<f64>() * 1e-6]).collect();
    let labels: Vec<usize> = (0..200).map(|_| rng.random_range(0..13)).collect();
    let cloud = PointCloud::new(coords, Some(labels), "").unwrap();
    let back = data::parse_labeled_points(&data::write_labeled_points(&cloud), true).map_err(|e| e.to_string())?;
    ensure(back == cloud, || "labeled-points round trip changed the cloud".into())?;

    let malformed_off = [
        ("OFF\n", 2),
        ("OFF\n3 1\n0 0 0\n1 0 0\n", 2),
        ("OFF\n2 0 0\n0 0 zero\n0 0 0\n", 3),
        ("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 3\n", 6),
        ("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n2 0 1\n", 6),
        ("COFF\n3 1 0\n", 1),
    ];
    for (text, line) in malformed_off {
        match data::parse_off(text) {
            Err(Error::Parse { line: l, .. }) if l == line => {}
            other => return Err(format!("OFF input {text:?}: expected parse error at line {line}, got {other:?}")),
        }
    }
    let malformed_points = [
        ("0 0 0 1\n1 1 1\n", 2),
        ("0 0 0 1\n\n1 1 x 2\n", 3),
        ("0 0 0 -4\n", 1),
        ("1 2 3 4 5\n", 1),
        ("", 1),
    ];
    for (text, line) in malformed_points {
        match data::parse_labeled_points(text, true) {
            Err(Error::Parse { line: l, .. }) if l == line => {}
            other => return Err(format!("points input {text:?}: expected parse error at line {line}, got {other:?}")),
        }
    }

    // Random byte soup must be rejected or accepted, never panic.
    let alphabet: Vec<char> = "OFF0123456789 .-+eE\n\tnaix#".chars().collect();
    let prev_hook = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    let mut panicked = None;
    for i in 0..2000 {
        let len = rng.random_range(0..120);
        let text: String = (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect();
        let ok = panic::catch_unwind(AssertUnwindSafe(|| {
            let _ = data::parse_off(&text);
            let _ = data::parse_labeled_points(&text, false);
            let _ = data::parse_labeled_points(&text, true);
        }));
        if ok.is_err() {
            panicked = Some((i, text));
            break;
        }
    }
    panic::set_hook(prev_hook);
    if let Some((i, text)) = panicked {
        return Err(format!("parser panicked on fuzz input {i}: {text:?}"));
    }
    Ok("round trips, glued header, positioned errors, 2000 fuzz inputs".into())
}

// ---------------------------------------------------------------------------

fn training_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data_dir = dir.path().join("data");
    let synth_cfg = dir.path().join("synth.json");
    std::fs::write(&synth_cfg, r#"{"samples_per_class": 8, "points_per_sample": 96}"#).map_err(|e| e.to_string())?;
    commands::synth(Some(&synth_cfg), 4, &data_dir, false).map_err(|e| e.to_string())?;
    let run_cfg = data_dir.join(commands::RUN_CONFIG);
    let mut run: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&run_cfg).unwrap()).unwrap();
    run["optim"]["epochs"] = 4.into();
    std::fs::write(&run_cfg, run.to_string()).unwrap();

    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        commands::train(&run_cfg, Some(17), None, &out, false).map_err(|e| e.to_string())?;
        let log = std::fs::read(out.join(commands::TRAIN_LOG)).unwrap();
        let ckpt = std::fs::read(out.join(commands::CHECKPOINT)).unwrap();
        outputs.push((log, ckpt));
    }
    ensure(outputs[0].0 == outputs[1].0, || "training logs differ".into())?;
    ensure(outputs[0].1 == outputs[1].1, || "checkpoints differ".into())?;
    Ok(format!(
        "logs ({} bytes) and checkpoints ({} bytes) byte-identical",
        outputs[0].0.len(),
        outputs[0].1.len()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("metric-oracle equivalence", metric_oracle_equivalence),
        ("gradient correctness", gradient_check),
        ("UPS contract", ups_contract),
        ("fusion contract", fusion_contract),
        ("desk-scale open-set experiment", desk_experiment),
        ("monotone invariance", monotone_invariance),
        ("parser golden tests", parser_golden),
        ("training determinism", training_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let result = panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
