//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use wstfuse::desk;
use wstfuse::fusenet::FrameSequence;
use wstfuse::metrics::{
    ablate, ablation_variants, ag_metric, enhance_all, evaluate, raw_sequence_metrics, std_metric, EvalItem,
    PUBLISHED_ABLATION,
};
use wstfuse::pipeline::{Enhancer, EnhancerConfig};
use wstfuse::selftest::{self, CheckResult};
use wstfuse::sonarsim::{load_dataset, stored_sequence, write_dataset, Preset, SimConfig};
use wstfuse::tensor::{ChannelLabel, FeatureTensor};
use wstfuse::training::{parse_trace_csv, prepare_examples, train, trace_csv, LossWeights, TrainConfig, TrainReport};
use wstfuse::Image;

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

struct Outcome {
    id: u32,
    name: &'static str,
    passed: bool,
    detail: String,
    seconds: f64,
}

impl Outcome {
    fn line(&self) -> String {
        format!(
            "{} criterion {:2} {}: {} ({:.1} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.seconds
        )
    }
}

impl From<CheckResult> for Outcome {
    fn from(c: CheckResult) -> Self {
        Outcome {
            id: c.id,
            name: c.name,
            passed: c.passed,
            detail: c.detail,
            seconds: c.seconds,
        }
    }
}

fn timed(id: u32, name: &'static str, body: impl FnOnce() -> Result<(bool, String)>) -> Outcome {
    let t = Instant::now();
    let (passed, detail) = body().unwrap_or_else(|e| (false, format!("error: {e}")));
    Outcome {
        id,
        name,
        passed,
        detail,
        seconds: t.elapsed().as_secs_f64(),
    }
}

/// Ten-minute budget for one training run.
const TRAIN_BUDGET_S: f64 = 600.0;
/// Five-minute budget for the built-in self test.
const SELFTEST_BUDGET_S: f64 = 300.0;

/// Reported on physical recordings: (preset, raw STD, enhanced STD, raw AG, enhanced AG).
const REPORTED_ENHANCEMENT: [(Preset, f64, f64, f64, f64); 3] = [
    (Preset::Tire, 58.79, 37.68, 8.09, 14.71),
    (Preset::Torpedo, 17.02, 13.14, 4.93, 5.92),
    (Preset::Frustum, 30.41, 23.24, 9.99, 13.66),
];

struct Training {
    model: Enhancer,
    first: TrainReport,
    second: TrainReport,
    seconds: [f64; 2],
}

fn train_desk_model() -> Result<Training> {
    let seqs = desk::training_set(0)?;
    let cfg = desk::train_config();
    let w = LossWeights::default();
    let mut runs = Vec::new();
    let mut seconds = [0.0; 2];
    for s in &mut seconds {
        let t = Instant::now();
        let mut enh = Enhancer::new(desk::enhancer())?;
        let examples = prepare_examples(&enh, &seqs)?;
        let rep = train(&mut enh, &examples, &cfg, &w)?;
        *s = t.elapsed().as_secs_f64();
        runs.push((enh, rep));
    }
    let (model, first) = runs.remove(0);
    let (_, second) = runs.remove(0);
    Ok(Training {
        model,
        first,
        second,
        seconds,
    })
}

fn training_progress(t: &Result<Training>) -> Result<(bool, String)> {
    let t = t.as_ref().map_err(|e| e.to_string())?;
    let ratio = t.first.last.total / t.first.initial.total;
    let identical = t.first.trace.len() == t.second.trace.len()
        && t.first.trace.iter().zip(&t.second.trace).all(|(a, b)| {
            a.total.to_bits() == b.total.to_bits()
                && a.down.to_bits() == b.down.to_bits()
                && a.con.to_bits() == b.con.to_bits()
                && a.grad.to_bits() == b.grad.to_bits()
        })
        && t.first.last.total.to_bits() == t.second.last.total.to_bits();
    let slowest = t.seconds[0].max(t.seconds[1]);
    let passed = ratio <= 0.8 && identical && slowest < TRAIN_BUDGET_S;
    Ok((
        passed,
        format!(
            "{} steps: L_total {:.5e} -> {:.5e} (ratio {ratio:.3}, need <= 0.8); traces identical: {identical}; \
             runs took {:.0} s and {:.0} s (limit {TRAIN_BUDGET_S:.0} s)",
            t.first.trace.len(),
            t.first.initial.total,
            t.first.last.total,
            t.seconds[0],
            t.seconds[1]
        ),
    ))
}

fn enhancement_trend(t: &Result<Training>) -> Result<(bool, String)> {
    let model = &t.as_ref().map_err(|e| e.to_string())?.model;
    let mut passed = true;
    let mut detail = Vec::new();
    for (preset, r_std, p_std, r_ag, p_ag) in REPORTED_ENHANCEMENT {
        let seqs = desk::held_out(preset, 10, 0)?
            .iter()
            .map(stored_sequence)
            .collect::<wstfuse::Result<Vec<_>>>()?;
        let outputs = enhance_all(model, &seqs)?;
        let mut wins = 0;
        let mut lower_std = 0;
        let mut higher_ag = 0;
        let (mut raw_std, mut raw_ag, mut out_std, mut out_ag) = (0.0, 0.0, 0.0, 0.0);
        for (seq, y) in seqs.iter().zip(&outputs) {
            let (s0, a0) = raw_sequence_metrics(seq)?;
            let (s1, a1) = (std_metric(y), ag_metric(y)?);
            lower_std += usize::from(s1 < s0);
            higher_ag += usize::from(a1 > a0);
            wins += usize::from(s1 < s0 && a1 > a0);
            raw_std += s0 / 10.0;
            raw_ag += a0 / 10.0;
            out_std += s1 / 10.0;
            out_ag += a1 / 10.0;
        }
        passed &= wins >= 8;
        detail.push(format!(
            "{}: {wins}/10 (STD lower {lower_std}/10, AG higher {higher_ag}/10; mean STD {raw_std:.2}->{out_std:.2}, \
             AG {raw_ag:.2}->{out_ag:.2}; physical-data reference {r_std}->{p_std}, {r_ag}->{p_ag}, not reproducible)",
            preset.name()
        ));
    }
    Ok((passed, format!("need >= 8/10 per preset; {}", detail.join("; "))))
}

fn ablation_parity() -> Result<(bool, String)> {
    let variants = ablation_variants();
    let labels: Vec<String> = variants.iter().map(|v| v.label()).collect();
    let published: Vec<&str> = PUBLISHED_ABLATION.iter().map(|p| p.0).collect();
    let mut passed = labels == published;
    let mut signature = 0;
    let mut detail = Vec::new();
    for seed in 0..3u64 {
        let (fit, held) = desk::ablation_data(seed, desk::TRAINING_SEQUENCES, 10)?;
        let base = EnhancerConfig {
            seed,
            ..desk::enhancer()
        };
        let cfg = TrainConfig {
            seed,
            ..desk::train_config()
        };
        let rep = ablate(&fit, &held, &variants, &base, &cfg, &LossWeights::default())?;
        let rows_ok = rep.rows.len() == 6 && rep.rows.iter().map(|r| r.input.as_str()).eq(published.iter().copied());
        passed &= rows_ok;
        let by_ag = |pick: fn(f64, f64) -> bool| {
            rep.rows
                .iter()
                .fold(None::<&wstfuse::metrics::AblationRow>, |best, r| match best {
                    Some(b) if !pick(r.ag, b.ag) => Some(b),
                    _ => Some(r),
                })
                .map(|r| r.input.clone())
                .unwrap_or_default()
        };
        let lowest = by_ag(|a, b| a < b);
        let highest = by_ag(|a, b| a > b);
        let ok = lowest == "FLR+Canny" && highest == "FLR+WST";
        signature += usize::from(ok);
        let ags: Vec<String> = rep.rows.iter().map(|r| format!("{} {:.3}", r.input, r.ag)).collect();
        detail.push(format!("seed {seed}: lowest AG {lowest}, highest AG {highest} [{}]", ags.join(", ")));
    }
    passed &= signature >= 2;
    Ok((
        passed,
        format!(
            "six rows in table order: {}; signature held in {signature}/3 (need >= 2); {}",
            labels == published,
            detail.join("; ")
        ),
    ))
}

fn dir_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn same_sequences(a: &[FrameSequence], b: &[FrameSequence]) -> bool {
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            bits(x.poses()) == bits(y.poses())
                && x.frames().len() == y.frames().len()
                && x
                    .frames()
                    .iter()
                    .zip(y.frames())
                    .all(|(f, g)| f.dims() == g.dims() && bits(f.pixels()) == bits(g.pixels()))
        })
}

fn reproducibility(t: &Result<Training>) -> Result<(bool, String)> {
    let tmp = tempfile::tempdir()?;
    let root = tmp.path();
    let mut checks: Vec<(&str, bool)> = Vec::new();

    let cfg = SimConfig {
        resolution: 32,
        frames: 3,
        seed: 11,
        ..SimConfig::preset(Preset::Frustum)
    };
    let written = write_dataset(&root.join("a"), &cfg, 3)?;
    write_dataset(&root.join("b"), &cfg, 3)?;
    checks.push(("dataset files identical", dir_bytes(&root.join("a")) == dir_bytes(&root.join("b"))));
    checks.push(("dataset reloads bit-exactly", same_sequences(&written, &load_dataset(&root.join("a"))?)));

    let model = &t.as_ref().map_err(|e| e.to_string())?.model;
    let ckpt = root.join("m.ckpt");
    model.save(&ckpt)?;
    let loaded = Enhancer::load(&ckpt)?;
    loaded.save(&root.join("m2.ckpt"))?;
    checks.push(("checkpoint bytes stable", fs::read(&ckpt)? == fs::read(root.join("m2.ckpt"))?));
    let same_params = model
        .param_vector()
        .iter()
        .zip(loaded.param_vector())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    let probe = stored_sequence(&desk::held_out(Preset::Torpedo, 1, 0)?[0])?;
    let same_output = model.forward(&probe)?.pixels() == loaded.forward(&probe)?.pixels();
    checks.push(("checkpoint parameters and output identical", same_params && same_output));

    let trace = &t.as_ref().map_err(|e| e.to_string())?.first.trace;
    let csv = trace_csv(trace);
    checks.push(("loss trace CSV", parse_trace_csv(&csv)? == *trace && trace_csv(&parse_trace_csv(&csv)?) == csv));

    let items: Vec<EvalItem> = written
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            s.frames().iter().enumerate().map(move |(k, f)| EvalItem {
                image_id: format!("{i}_{k}"),
                method: "raw".into(),
                target: "frustum".into(),
                image: f.clone(),
            })
        })
        .collect();
    checks.push(("metrics CSV deterministic", evaluate(&items)?.csv() == evaluate(&items)?.csv()));

    let feat = FeatureTensor::from_images(
        &[Image::filled(4, 3, 0.5), Image::from_fn(4, 3, |y, x| (y * 3 + x) as f64 / 11.0)],
        vec![ChannelLabel::S0, ChannelLabel::Other("ramp".into())],
    )?;
    let mut dump = Vec::new();
    feat.write_dump(&mut dump)?;
    let back = FeatureTensor::read_dump(dump.as_slice(), Path::new("dump"))?;
    let mut again = Vec::new();
    back.write_dump(&mut again)?;
    checks.push(("tensor dump", dump == again));

    let t0 = Instant::now();
    let report = selftest::run();
    let secs = t0.elapsed().as_secs_f64();
    let ids: Vec<u32> = report.iter().map(|c| c.id).collect();
    checks.push((
        "selftest covers 1-6 and 10 and passes",
        ids == [1, 2, 3, 4, 5, 6, 10] && report.iter().all(|c| c.passed),
    ));
    checks.push(("selftest within budget", secs < SELFTEST_BUDGET_S));

    let passed = checks.iter().all(|c| c.1);
    let listed: Vec<String> = checks
        .iter()
        .map(|(n, ok)| format!("{n}: {}", if *ok { "ok" } else { "FAILED" }))
        .collect();
    Ok((passed, format!("{}; selftest {secs:.1} s (limit {SELFTEST_BUDGET_S:.0} s)", listed.join(", "))))
}

fn main() -> ExitCode {
    // one worker keeps every run bit-reproducible
    rayon::ThreadPoolBuilder::new().num_threads(1).build_global().ok();

    let mut outcomes: Vec<Outcome> = Vec::new();
    let mut report = |o: Outcome| {
        println!("{}", o.line());
        outcomes.push(o);
    };
    report(selftest::channel_arithmetic().into());
    report(selftest::zero_offset_equivalence().into());
    report(selftest::gradient_fidelity().into());
    report(selftest::scattering_stability().into());
    report(selftest::metric_oracles().into());
    report(selftest::loss_identities().into());

    let t = Instant::now();
    let training = train_desk_model();
    let train_secs = t.elapsed().as_secs_f64();
    let mut o = timed(7, "training progress", || training_progress(&training));
    o.seconds += train_secs;
    report(o);
    report(timed(8, "enhancement trend", || enhancement_trend(&training)));
    report(timed(9, "ablation parity", ablation_parity));
    report(selftest::fusion_invariances().into());
    report(timed(11, "reproducibility and formats", || reproducibility(&training)));

    let failed: Vec<u32> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    println!(
        "acceptance: {} of {} criteria passed{}",
        outcomes.len() - failed.len(),
        outcomes.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failed: {failed:?}")
        }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
