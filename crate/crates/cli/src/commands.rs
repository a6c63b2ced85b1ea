use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use wstfuse::config::KeyValues;
use wstfuse::desk;
use wstfuse::io::{atomic_write, read_image, write_image};
use wstfuse::metrics::{ablate, ablation_variants, ag_metric, evaluate, std_metric, stored_output, EvalItem};
use wstfuse::pipeline::{Enhancer, EnhancerConfig, InputVariant};
use wstfuse::scatter::{BankConfig, Bridge, NormState, OffsetParams};
use wstfuse::sonarsim::{
    gen_sequence, load_dataset, load_sequence_dir, stored_sequence, write_dataset, write_sequence_dir, Preset,
    SimConfig,
};
use wstfuse::tensor::{ChannelLabel, FeatureTensor};
use wstfuse::training::{prepare_examples, train, trace_csv, LossWeights, TrainConfig};
use wstfuse::{selftest, Error};

use crate::{Cli, Command};

/// Bad flags or arguments.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// A check or run that completed but did not meet its numeric target.
#[derive(Debug)]
struct Failed(String);

impl std::fmt::Display for Failed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Failed {}

/// 2 usage/config, 3 numeric, 4 I/O.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::Config { .. } | Error::InvalidArgument(_) | Error::Dimensions(_) | Error::ShapeMismatch(_) => 2,
                Error::NonFinite(_) | Error::StaleTape(_) => 3,
                Error::Io { .. } | Error::Format { .. } => 4,
            };
        }
        if cause.is::<Usage>() {
            return 2;
        }
        if cause.is::<Failed>() {
            return 3;
        }
        if cause.is::<std::io::Error>() {
            return 4;
        }
    }
    1
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate => simulate(cli),
        Command::Train { data, steps } => train_cmd(cli, data, *steps),
        Command::Enhance { checkpoint, sequence } => enhance(cli, checkpoint, sequence),
        Command::Evaluate { root } => evaluate_cmd(cli, root),
        Command::Ablate { data, steps } => ablate_cmd(cli, data, *steps),
        Command::BankDump { image } => bank_dump(cli, image.as_deref()),
        Command::Selftest => selftest_cmd(cli),
    }
}

fn config(cli: &Cli) -> Result<KeyValues> {
    let Some(path) = &cli.config else {
        return Ok(KeyValues::parse("")?);
    };
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    KeyValues::parse(&text).with_context(|| format!("reading {}", path.display()))
}

fn finish(cli: &Cli, kv: KeyValues) -> Result<()> {
    let path = cli.config.as_deref().unwrap_or(Path::new("<none>"));
    kv.finish().with_context(|| format!("reading {}", path.display()))
}

fn out_path(cli: &Cli, what: &str) -> Result<PathBuf> {
    cli.out
        .clone()
        .ok_or_else(|| Usage(format!("--out is required: {what}")).into())
}

fn no_sr2x(cli: &Cli, sub: &str) -> Result<()> {
    if cli.sr2x {
        bail!(Usage(format!("--sr2x has no effect on `{sub}`")));
    }
    Ok(())
}

fn simulate(cli: &Cli) -> Result<()> {
    no_sr2x(cli, "simulate")?;
    let mut kv = config(cli)?;
    let mut sim = SimConfig::preset(Preset::Tire);
    sim.apply(&mut kv)?;
    let sequences: usize = kv.take("sequences")?.unwrap_or(1);
    finish(cli, kv)?;
    if let Some(s) = cli.seed {
        sim.seed = s;
    }
    sim.validate()?;
    if sequences == 0 {
        bail!(Usage("sequences must be >= 1".into()));
    }
    let out = out_path(cli, "dataset directory")?;
    if sequences == 1 {
        let seq = stored_sequence(&gen_sequence(&sim)?)?;
        write_sequence_dir(&out, &sim, &seq)?;
    } else {
        write_dataset(&out, &sim, sequences)?;
    }
    println!(
        "wrote {sequences} sequence(s) of {} {}x{} {} frames to {}",
        sim.frames,
        sim.resolution,
        sim.resolution,
        sim.scene.kind,
        out.display()
    );
    Ok(())
}

/// Everything a training run reads from the config file.
struct TrainSetup {
    enhancer: EnhancerConfig,
    train: TrainConfig,
    weights: LossWeights,
    fixed_norm: bool,
}

fn train_setup(cli: &Cli, kv: &mut KeyValues, steps: Option<usize>) -> Result<TrainSetup> {
    let mut enhancer = desk::enhancer();
    let mut train = desk::train_config();
    let mut weights = LossWeights::default();
    let model_seed_given = kv.line_of("model_seed").is_some();
    train.apply(kv)?;
    weights.apply(kv)?;
    enhancer.apply(kv)?;
    let fixed_norm = match kv.take_str("norm") {
        None => false,
        Some((_, v)) if v == "instance" => false,
        Some((_, v)) if v == "fixed" => true,
        Some((line, v)) => bail!(Error::Config {
            line,
            reason: format!("norm must be `instance` or `fixed`, got `{v}`"),
        }),
    };
    if let Some(s) = cli.seed {
        train.seed = s;
        if !model_seed_given {
            enhancer.seed = s;
        }
    }
    if cli.sr2x {
        enhancer.sr2x = true;
    }
    if let Some(s) = steps {
        train.steps = s;
    }
    Ok(TrainSetup {
        enhancer,
        train,
        weights,
        fixed_norm,
    })
}

fn train_cmd(cli: &Cli, data: &Path, steps: Option<usize>) -> Result<()> {
    let mut kv = config(cli)?;
    let mut setup = train_setup(cli, &mut kv, steps)?;
    finish(cli, kv)?;
    let out = out_path(cli, "training output directory")?;
    let seqs = load_dataset(data)?;
    let mut enh = Enhancer::new(setup.enhancer.clone())?;
    if setup.fixed_norm {
        if enh.config().variant != InputVariant::Wst {
            bail!(Usage("norm = fixed only applies to the WST variant".into()));
        }
        enh.calibrate_norm(&seqs)?;
    }
    if setup.train.steps == 0 {
        fs::create_dir_all(&out).map_err(|e| Error::Io {
            path: out.clone(),
            source: e,
        })?;
        enh.save(&out.join("model.ckpt"))?;
        atomic_write(&out.join("loss.csv"), trace_csv(&[]).as_bytes())?;
        println!("0 steps: wrote the initial model to {}", out.join("model.ckpt").display());
        return Ok(());
    }
    setup.train.out_dir = Some(out.clone());
    let examples = prepare_examples(&enh, &seqs)?;
    let rep = train(&mut enh, &examples, &setup.train, &setup.weights)?;
    if cli.verbose > 0 {
        for (i, l) in rep.trace.iter().enumerate() {
            println!("step {i:5} loss {:.6e}", l.total);
        }
    }
    println!(
        "{} steps on {} sequences: loss {:.6e} -> {:.6e} ({:.3}x); wrote {}",
        setup.train.steps,
        seqs.len(),
        rep.initial.total,
        rep.last.total,
        rep.last.total / rep.initial.total,
        out.display()
    );
    Ok(())
}

fn enhance(cli: &Cli, checkpoint: &Path, sequence: &Path) -> Result<()> {
    let kv = config(cli)?;
    finish(cli, kv)?;
    let enh = Enhancer::load(checkpoint)?;
    if cli.sr2x && !enh.config().sr2x {
        bail!(Usage(format!("{} was trained without --sr2x", checkpoint.display())));
    }
    let (_, seq) = load_sequence_dir(sequence)?;
    let y = stored_output(&enh.forward(&seq)?)?;
    let out = cli.out.clone().unwrap_or_else(|| sequence.join("enhanced.png"));
    write_image(&y, &out)?;
    let (h, w) = y.dims();
    println!(
        "{} {h}x{w} std={:.4} ag={:.4}",
        out.display(),
        std_metric(&y),
        ag_metric(&y)?
    );
    Ok(())
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    v.sort();
    Ok(v)
}

fn is_image(p: &Path) -> bool {
    matches!(p.extension().and_then(|e| e.to_str()), Some("png" | "pgm"))
}

fn evaluate_cmd(cli: &Cli, root: &Path) -> Result<()> {
    no_sr2x(cli, "evaluate")?;
    let kv = config(cli)?;
    finish(cli, kv)?;
    let name = |p: &Path| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let mut items = Vec::new();
    for method in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        for target in sorted_entries(&method)?.into_iter().filter(|p| p.is_dir()) {
            for file in sorted_entries(&target)?.into_iter().filter(|p| is_image(p)) {
                items.push(EvalItem {
                    image_id: name(&file),
                    method: name(&method),
                    target: name(&target),
                    image: read_image(&file)?,
                });
            }
        }
    }
    if items.is_empty() {
        bail!(Usage(format!("no images under {}/<method>/<target>/", root.display())));
    }
    let ev = evaluate(&items)?;
    let out = cli.out.clone().unwrap_or_else(|| root.to_path_buf());
    fs::create_dir_all(&out).map_err(|e| Error::Io {
        path: out.clone(),
        source: e,
    })?;
    let mut per_image = String::from("image_id,method,target,std,ag\n");
    for r in &ev.reports {
        let _ = writeln!(per_image, "{},{},{},{:?},{:?}", r.image_id, r.method, r.target, r.std, r.ag);
    }
    atomic_write(&out.join("metrics.csv"), ev.csv().as_bytes())?;
    atomic_write(&out.join("per_image.csv"), per_image.as_bytes())?;
    print!("{}", ev.csv());
    Ok(())
}

fn ablate_cmd(cli: &Cli, data: &Path, steps: Option<usize>) -> Result<()> {
    let mut kv = config(cli)?;
    let mut setup = train_setup(cli, &mut kv, steps)?;
    let variants = match kv.take_str("variants") {
        None => ablation_variants(),
        Some((line, list)) => list
            .split(',')
            .map(|v| {
                InputVariant::parse(v).map_err(|e| Error::Config {
                    line,
                    reason: e.to_string(),
                })
            })
            .collect::<std::result::Result<Vec<_>, _>>()?,
    };
    let test_count: Option<usize> = kv.take("test_sequences")?;
    finish(cli, kv)?;
    if setup.fixed_norm {
        bail!(Usage("ablate trains every variant with instance normalization".into()));
    }
    if setup.train.steps == 0 {
        bail!(Usage("ablate needs steps >= 1".into()));
    }
    let out = out_path(cli, "ablation output directory")?;
    let seqs = load_dataset(data)?;
    let n_test = test_count.unwrap_or((seqs.len() / 4).max(1));
    if seqs.len() < 2 || n_test == 0 || n_test >= seqs.len() {
        bail!(Usage(format!(
            "{} sequences cannot be split into training and {n_test} held-out sequence(s)",
            seqs.len()
        )));
    }
    let (fit, test) = seqs.split_at(seqs.len() - n_test);
    setup.train.out_dir = Some(out.clone());
    let report = ablate(fit, test, &variants, &setup.enhancer, &setup.train, &setup.weights)?;
    atomic_write(&out.join("ablation.csv"), report.csv().as_bytes())?;
    let t = &setup.train;
    let e = &setup.enhancer;
    let params = format!(
        "train_sequences = {}\ntest_sequences = {n_test}\nsteps = {}\nlearning_rate = {:?}\nbatch = {}\nseed = {}\n\
         lambda_con = {:?}\nlambda_grad = {:?}\nc_lat = {}\nmodel_seed = {}\nsr2x = {}\nbank = {:?}\nfeatures = {}\n",
        fit.len(),
        t.steps,
        t.learning_rate,
        t.batch,
        t.seed,
        setup.weights.lambda_con,
        setup.weights.lambda_grad,
        e.c_lat,
        e.seed,
        e.sr2x,
        e.bank,
        e.features.describe()
    );
    atomic_write(&out.join("ablation_params.txt"), params.as_bytes())?;
    print!("{}", report.annotated());
    Ok(())
}

fn bank_dump(cli: &Cli, image: Option<&Path>) -> Result<()> {
    no_sr2x(cli, "bank-dump")?;
    let mut kv = config(cli)?;
    let checkpoint: Option<String> = kv.take("checkpoint")?;
    let mut ecfg = EnhancerConfig::default();
    ecfg.apply(&mut kv)?;
    finish(cli, kv)?;
    let (cfg, offsets, norm): (BankConfig, OffsetParams, Option<NormState>) = match checkpoint {
        Some(path) => {
            let enh = Enhancer::load(Path::new(&path))?;
            let norm = (enh.config().variant == InputVariant::Wst).then(|| enh.norm().clone());
            (enh.config().bank.clone(), enh.offsets().clone(), norm)
        }
        None => (ecfg.bank.clone(), OffsetParams::zeros(&ecfg.bank), None),
    };
    let out = out_path(cli, "bank dump directory")?;
    fs::create_dir_all(&out).map_err(|e| Error::Io {
        path: out.clone(),
        source: e,
    })?;
    let probe = Bridge::new(&cfg, &offsets, 2, 2)?;
    let bank = probe.bank();
    let r = bank.kernels().iter().map(|k| k.radius).max().unwrap_or(0);
    let size = 2 * r + 1;
    let mut data = Vec::with_capacity(2 * bank.kernels().len() * size * size);
    let mut labels = Vec::new();
    let mut listing = String::from("index,j,k,theta,delta_j,delta_theta,radius,l1\n");
    for (n, k) in bank.kernels().iter().enumerate() {
        let (j, o) = cfg.filter_jk(n);
        let pad = (r - k.radius) as isize;
        for part in 0..2 {
            for v in 0..size as isize {
                for u in 0..size as isize {
                    let (kv_, ku) = (v - pad, u - pad);
                    let inside = (0..k.size() as isize).contains(&kv_) && (0..k.size() as isize).contains(&ku);
                    let z = if inside { k.values[(kv_ as usize) * k.size() + ku as usize] } else { Default::default() };
                    data.push(if part == 0 { z.re } else { z.im });
                }
            }
            labels.push(ChannelLabel::Other(format!("psi(j={j},k={o}).{}", if part == 0 { "re" } else { "im" })));
        }
        let _ = writeln!(
            listing,
            "{n},{j},{o},{:?},{:?},{:?},{},{:?}",
            cfg.orientation(o),
            offsets.delta_j[n],
            offsets.delta_theta[n],
            k.radius,
            k.l1_norm()
        );
    }
    let kernels = FeatureTensor::new(size, size, labels.len(), data, labels)?;
    let mut bytes = Vec::new();
    kernels.write_dump(&mut bytes).context("encoding kernel dump")?;
    atomic_write(&out.join("bank.tensor"), &bytes)?;
    atomic_write(&out.join("bank.csv"), listing.as_bytes())?;
    println!("{} filters, kernels {size}x{size}, written to {}", bank.kernels().len(), out.display());
    if let Some(path) = image {
        let img = read_image(path)?;
        let (h, w) = img.dims();
        let bridge = Bridge::new(&cfg, &offsets, h, w)?;
        let norm = norm.unwrap_or_else(|| NormState::instance(bridge.channels()));
        let (feat, _) = bridge.forward(&img, &norm, false)?;
        let mut bytes = Vec::new();
        feat.write_dump(&mut bytes).context("encoding feature dump")?;
        atomic_write(&out.join("features.tensor"), &bytes)?;
        println!(
            "features {}x{}x{} of {}",
            feat.channels(),
            feat.height(),
            feat.width(),
            path.display()
        );
    }
    Ok(())
}

fn selftest_cmd(cli: &Cli) -> Result<()> {
    no_sr2x(cli, "selftest")?;
    let kv = config(cli)?;
    finish(cli, kv)?;
    let report = selftest::run();
    for c in &report {
        println!("{c}");
    }
    let failed = report.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        bail!(Failed(format!("{failed} of {} checks failed", report.len())));
    }
    Ok(())
}
