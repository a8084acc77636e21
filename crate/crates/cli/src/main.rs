use std::fs;
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use mixseg::attacks::{privacy_sweep, AttackKind, SweepConfig, TvConfig};
use mixseg::experiment::{
    reliability, run_experiment, run_fig3_analogue, run_privacy_suite, run_table1_analogue, sha256_hex, BackendKind, ExperimentConfig, Models,
    Study,
};
use mixseg::metrics::{write_csv, MetricReport};
use mixseg::mixer::{AlphaBounds, ReferencePool};
use mixseg::models::{
    noisy_oracle_segment, train_end_to_end, train_segmenter, train_unmixer, Checkpoint, OracleAccess, OracleLedger, SegmentationBackend,
    TinyCnn, TrainConfig, TrainingSet, UnmixNet,
};
use mixseg::phantom::{generate_subject, render_scan, ScanConfig, PHANTOM_CLASSES};
use mixseg::protocol::{client_segment_volume, serve, ClientOptions, ClientSession, Decoder, ServerOptions};
use mixseg::seeds::{child_seed, rng_from, Stream};
use mixseg::tensor::{LabelField, PatchGrid, Tensor, Volume};

#[derive(Parser)]
#[command(name = "mixseg", version, about = "Privacy-preserving 3D segmentation by mixing with private references")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic phantom data.
    Phantom {
        #[command(subcommand)]
        action: PhantomCmd,
    },
    /// Train networks and write a checkpoint.
    Train {
        what: TrainWhat,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one evaluation stage and write a key=value report.
    Eval {
        stage: EvalStage,
        #[arg(long)]
        config: PathBuf,
        /// Load models instead of training them.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Source-separation attacks on mixtures of scans in a directory.
    Attack {
        #[command(subcommand)]
        action: AttackCmd,
    },
    /// Serve a segmentation backend.
    Serve {
        #[arg(long, value_enum)]
        backend: BackendArg,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        listen: String,
        /// Accept labeled training traffic.
        #[arg(long)]
        training: bool,
        /// Directory of ideal responses for the oracle backends.
        #[arg(long)]
        oracle_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Segment a volume through a server without revealing it.
    Segment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        key_seed: u64,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 1)]
        tta: usize,
        #[arg(long, value_enum, default_value_t = DecoderArg::Naive)]
        decoder: DecoderArg,
        #[arg(long)]
        server: String,
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint holding the learned decoder.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Directory of labeled reference scans (defaults to phantoms drawn from the key seed).
        #[arg(long)]
        refs: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        patch: usize,
        #[arg(long)]
        stride: Option<usize>,
        /// Ground-truth labels; with --oracle-dir, exports ideal responses for an oracle server.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        oracle_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        timeout_secs: u64,
    },
    /// Run a full experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum PhantomCmd {
    Gen {
        #[arg(long)]
        subjects: usize,
        #[arg(long)]
        scans_per_subject: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 48)]
        dims: usize,
    },
}

#[derive(Subcommand)]
enum AttackCmd {
    Bss {
        #[arg(long)]
        alpha: f64,
        #[arg(long, value_enum)]
        attack: AttackArg,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        patch: usize,
        #[arg(long, default_value_t = 100)]
        library: usize,
        #[arg(long, default_value_t = 300)]
        iterations: usize,
        #[arg(long, default_value_t = 0.05)]
        tv_weight: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainWhat {
    Seg,
    Unmix,
    E2e,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalStage {
    Table1,
    Fig3,
    Privacy,
    Icc,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackArg {
    Tv,
    Dict,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Oracle,
    Noisy,
    Cnn,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DecoderArg {
    Naive,
    Learned,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = dispatch(Cli::parse().command) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Phantom { action: PhantomCmd::Gen { subjects, scans_per_subject, seed, out, dims } } => {
            phantom_gen(subjects, scans_per_subject, seed, &out, dims)
        }
        Command::Train { what, config, seed, out } => train(what, &config, seed, &out),
        Command::Eval { stage, config, ckpt, report, csv } => eval(stage, &config, ckpt, &report, csv.as_deref()),
        Command::Attack { action: AttackCmd::Bss { alpha, attack, input, report, seed, patch, library, iterations, tv_weight } } => {
            let kind = match attack {
                AttackArg::Tv => AttackKind::Tv,
                AttackArg::Dict => AttackKind::Dictionary,
            };
            let tv = TvConfig { iterations, tv_weight, ..Default::default() };
            attack_bss(alpha, kind, &input, &report, seed, patch, library, tv)
        }
        Command::Serve { backend, ckpt, listen, training, oracle_dir, noise, seed } => {
            serve_cmd(backend, ckpt.as_deref(), &listen, training, oracle_dir, noise, seed)
        }
        Command::Segment { input, key_seed, alpha, tta, decoder, server, out, ckpt, refs, patch, stride, labels, oracle_dir, timeout_secs } => {
            let args = SegmentArgs { key_seed, alpha, tta, decoder, patch, stride: stride.unwrap_or(patch), timeout_secs };
            segment(&input, &args, &server, &out, ckpt.as_deref(), refs.as_deref(), labels.as_deref(), oracle_dir.as_deref())
        }
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let summary = run_experiment(&cfg, &out)?;
            for (name, hash) in &summary.artifacts {
                println!("{hash}  {name}");
            }
            Ok(())
        }
    }
}

fn phantom_gen(subjects: usize, scans: usize, seed: u64, out: &Path, dims: usize) -> Result<()> {
    if subjects == 0 || scans == 0 {
        bail!("need at least one subject and one scan per subject");
    }
    fs::create_dir_all(out)?;
    let cfg = ScanConfig { dims: [dims; 3], ..Default::default() };
    let mut manifest = String::from("subject\tscan\timage\tlabels\timage_sha256\tlabels_sha256\n");
    for s in 0..subjects as u64 {
        let spec = generate_subject(child_seed(seed, Stream::Phantom, s));
        for k in 0..scans as u64 {
            let (vol, labels) = render_scan::<f32>(&spec, &cfg, child_seed(seed, Stream::Phantom, (s << 16) | (k + 1)))?;
            let stem = format!("s{s:03}_scan{k}");
            let (img, lab) = (format!("{stem}.mxsg"), format!("{stem}.labels.mxsg"));
            let img_bytes = Tensor::from(&vol).encode();
            let lab_bytes = Tensor::from(&labels).encode();
            fs::write(out.join(&img), &img_bytes)?;
            fs::write(out.join(&lab), &lab_bytes)?;
            manifest += &format!("{}\t{}\t{img}\t{lab}\t{}\t{}\n", vol.subject_id, vol.scan_id, sha256_hex(&img_bytes), sha256_hex(&lab_bytes));
        }
    }
    fs::write(out.join("manifest.tsv"), manifest)?;
    log::info!("wrote {} scans to {}", subjects * scans, out.display());
    Ok(())
}

/// Reads scans written by `phantom gen` (subject ids come from the manifest).
fn load_scans(dir: &Path) -> Result<Vec<(Volume<f32>, LabelField<f32>)>> {
    let manifest = fs::read_to_string(dir.join("manifest.tsv")).with_context(|| format!("no manifest.tsv in {}", dir.display()))?;
    let mut out = Vec::new();
    for line in manifest.lines().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 4 {
            bail!("malformed manifest line {line:?}");
        }
        let vol = Tensor::<f32>::read(dir.join(cols[2]))?.into_volume()?.with_ids(cols[0], cols[1]);
        let labels = Tensor::<f32>::read(dir.join(cols[3]))?.into_labels()?;
        out.push((vol, labels));
    }
    Ok(out)
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn train(what: TrainWhat, config: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let cfg = load_config(config, seed)?;
    let study = Study::build(&cfg)?;
    let mut rng = rng_from(child_seed(cfg.seed, Stream::Train, 0));
    let targets = ReferencePool::new(study.train.clone())?;
    let data = TrainingSet::random(targets, study.pool_a.clone(), cfg.train.patch);
    let tc = TrainConfig { seed: child_seed(cfg.seed, Stream::Train, 1), ..cfg.train.clone() };
    let mut ck = Checkpoint::new();
    let log = match what {
        TrainWhat::Seg => {
            let mut seg = TinyCnn::<f32>::new(&mut rng, PHANTOM_CLASSES);
            let log = train_segmenter(&mut seg, &data, &tc)?;
            ck.insert_net("seg", &seg.net);
            log
        }
        TrainWhat::Unmix => {
            let mut unmix = UnmixNet::<f32>::new(&mut rng, PHANTOM_CLASSES);
            let noise = if cfg.backend == BackendKind::Oracle { 0.0 } else { cfg.noise_std };
            let mut noise_rng = rng_from(child_seed(cfg.seed, Stream::Backend, 0));
            let log = train_unmixer(&mut unmix, &data, &tc, |s, x| {
                let access = OracleAccess { y_target: s.y_target.clone(), y_ref: s.y_ref.clone(), alpha: s.alpha };
                noisy_oracle_segment(x, Some(&access), noise, &mut noise_rng)
            })?;
            ck.insert_net("unmix", &unmix.net);
            log
        }
        TrainWhat::E2e => {
            let mut seg = TinyCnn::<f32>::new(&mut rng, PHANTOM_CLASSES);
            let mut unmix = UnmixNet::<f32>::new(&mut rng, PHANTOM_CLASSES);
            let log = train_end_to_end(&mut seg, &mut unmix, &data, &tc)?;
            ck.insert_net("seg", &seg.net);
            ck.insert_net("unmix", &unmix.net);
            log
        }
    };
    ck.save(out)?;
    let tail = &log.losses[log.losses.len().saturating_sub(50)..];
    log::info!("final loss {:.4}; checkpoint written to {}", tail.iter().sum::<f64>() / tail.len() as f64, out.display());
    Ok(())
}

fn eval(stage: EvalStage, config: &Path, ckpt: Option<PathBuf>, report_path: &Path, csv: Option<&Path>) -> Result<()> {
    let mut cfg = load_config(config, None)?;
    if ckpt.is_some() {
        cfg.checkpoint = ckpt;
    }
    let study = Study::build(&cfg)?;
    let models = Models::load_or_train(&cfg, &study)?;
    let (report, header, rows): (MetricReport, Vec<String>, Vec<Vec<String>>) = match stage {
        EvalStage::Table1 => {
            let t = run_table1_analogue(&cfg, &study, &models)?;
            (t.report, t.header, t.rows)
        }
        EvalStage::Fig3 => {
            let rows = run_fig3_analogue(&cfg, &study, &models, &cfg.tta)?;
            let mut r = MetricReport::new();
            for (k, l, n) in &rows {
                r.set_f64(format!("fig3.k{k}.learned"), *l);
                r.set_f64(format!("fig3.k{k}.naive"), *n);
            }
            let csv = rows.iter().map(|(k, l, n)| vec![k.to_string(), l.to_string(), n.to_string()]).collect();
            (r, vec!["k".into(), "dice_learned".into(), "dice_naive".into()], csv)
        }
        EvalStage::Privacy => {
            let p = run_privacy_suite(&cfg, &study, &models)?;
            let rows = p
                .sweep
                .iter()
                .map(|r| vec![r.alpha.to_string(), r.attack.name().into(), r.mean_ms_ssim.to_string(), r.reid_map.to_string()])
                .collect();
            (p.report, vec!["alpha".into(), "attack".into(), "ms_ssim_mean".into(), "reid_map".into()], rows)
        }
        EvalStage::Icc => {
            let mut r = MetricReport::new();
            let mut rows = Vec::new();
            for (name, icc) in reliability(&cfg, &study, &models)? {
                r.set_f64(format!("icc.{name}"), icc.icc);
                r.set_f64(format!("icc.{name}.lower"), icc.lower);
                r.set_f64(format!("icc.{name}.upper"), icc.upper);
                rows.push(vec![name, icc.icc.to_string(), icc.lower.to_string(), icc.upper.to_string()]);
            }
            (r, vec!["measure".into(), "icc".into(), "lower".into(), "upper".into()], rows)
        }
    };
    report.write(report_path)?;
    print!("{}", report.to_text());
    if let Some(path) = csv {
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        write_csv(path, &header, &rows)?;
    }
    Ok(())
}

/// Client and attacker reference scans are phantoms independent of the attacked data.
fn generated_pool(seed: u64, stream: Stream, count: u64, dims: [usize; 3]) -> Result<ReferencePool<f32>> {
    let cfg = ScanConfig { dims, ..Default::default() };
    let scans = (0..count)
        .map(|i| render_scan(&generate_subject(child_seed(seed, stream, i)), &cfg, child_seed(seed, stream, 1000 + i)))
        .collect::<mixseg::Result<Vec<_>>>()?;
    Ok(ReferencePool::new(scans)?)
}

#[allow(clippy::too_many_arguments)]
fn attack_bss(alpha: f64, kind: AttackKind, input: &Path, report_path: &Path, seed: u64, patch: usize, library: usize, tv: TvConfig) -> Result<()> {
    let scans = load_scans(input)?;
    let dims = scans.first().context("no scans in input directory")?.0.dims();
    let client = generated_pool(seed, Stream::Mix, 4, dims)?;
    let attacker = generated_pool(seed, Stream::Attack, 4, dims)?;
    let sweep = SweepConfig {
        alphas: vec![alpha],
        attacks: vec![kind, AttackKind::Keyed],
        patch: [patch; 3],
        library_size: library,
        tv,
        seed,
        ..Default::default()
    };
    let vols: Vec<Volume<f32>> = scans.into_iter().map(|(v, _)| v).collect();
    let rows = privacy_sweep(&vols, &client, &attacker, &sweep)?;
    let mut r = MetricReport::new();
    r.set_f64("attack.alpha", alpha);
    r.set("attack.kind", kind.name());
    r.set("attack.note", "classical attack; recovery is a lower bound on adversary strength");
    for row in rows {
        let p = format!("attack.{}", row.attack.name());
        r.set_f64(format!("{p}.ms_ssim_mean"), row.mean_ms_ssim);
        r.set_f64(format!("{p}.ms_ssim_std"), row.std_ms_ssim);
        r.set_f64("attack.reid_map", row.reid_map);
        r.set_f64("attack.reid_f1", row.reid_f1);
    }
    r.write(report_path)?;
    print!("{}", r.to_text());
    Ok(())
}

fn resolve(addr: &str) -> Result<SocketAddr> {
    addr.to_socket_addrs()?.next().with_context(|| format!("cannot resolve {addr}"))
}

fn serve_cmd(backend: BackendArg, ckpt: Option<&Path>, listen: &str, training: bool, oracle_dir: Option<PathBuf>, noise: f64, seed: u64) -> Result<()> {
    let ledger = Arc::new(match oracle_dir {
        Some(d) => OracleLedger::with_dir(d),
        None => OracleLedger::new(),
    });
    let backend = match backend {
        BackendArg::Oracle => SegmentationBackend::Oracle { ledger },
        BackendArg::Noisy => SegmentationBackend::NoisyOracle { ledger, noise_std: noise, seed },
        BackendArg::Cnn => {
            let ck = Checkpoint::<f32>::load(ckpt.context("--ckpt is required for the cnn backend")?)?;
            SegmentationBackend::TinyCnn(TinyCnn::from_net(ck.net("seg")?)?)
        }
    };
    let handle = serve(Arc::new(backend), resolve(listen)?, ServerOptions { training })?;
    println!("listening on {}", handle.local_addr());
    handle.wait();
    Ok(())
}

struct SegmentArgs {
    key_seed: u64,
    alpha: f64,
    tta: usize,
    decoder: DecoderArg,
    patch: usize,
    stride: usize,
    timeout_secs: u64,
}

#[allow(clippy::too_many_arguments)]
fn segment(
    input: &Path,
    args: &SegmentArgs,
    server: &str,
    out: &Path,
    ckpt: Option<&Path>,
    refs: Option<&Path>,
    labels: Option<&Path>,
    oracle_dir: Option<&Path>,
) -> Result<()> {
    let vol = Tensor::<f32>::read(input)?.into_volume()?;
    let pool = match refs {
        Some(dir) => ReferencePool::new(load_scans(dir)?)?,
        None => generated_pool(args.key_seed, Stream::Mix, 4, vol.dims())?,
    };
    let bounds = AlphaBounds::default();
    let grid = PatchGrid::new(vol.dims(), [args.patch; 3], [args.stride; 3])?;
    let mut rng = rng_from(child_seed(args.key_seed, Stream::Mix, u64::MAX));
    let mut session = ClientSession::draw(&mut rng, grid, &pool, args.alpha, bounds, args.tta)?;
    if let (Some(lpath), Some(dir)) = (labels, oracle_dir) {
        fs::create_dir_all(dir)?;
        let truth = Tensor::<f32>::read(lpath)?.into_labels()?;
        for (x, access) in session.oracle_entries(&vol, &truth)? {
            OracleLedger::export(dir, &x, &access)?;
        }
    }
    let unmix = match args.decoder {
        DecoderArg::Learned => {
            let ck = Checkpoint::<f32>::load(ckpt.context("--ckpt is required for the learned decoder")?)?;
            Some(UnmixNet::from_net(ck.net("unmix")?)?)
        }
        DecoderArg::Naive => None,
    };
    let decoder = match &unmix {
        Some(net) => Decoder::Learned(net),
        None => Decoder::Naive,
    };
    let opts = ClientOptions { timeout: std::time::Duration::from_secs(args.timeout_secs), ..Default::default() };
    let result = client_segment_volume(&vol, &mut session, resolve(server)?, decoder, &opts)?;
    Tensor::from(&result).write(out)?;
    if let Some(lpath) = labels {
        let truth = Tensor::<f32>::read(lpath)?.into_labels()?;
        let d = mixseg::metrics::dice_report(&result, &truth)?;
        println!("dice per class {:?}, macro {:.6}", d.per_class, d.macro_avg);
    }
    Ok(())
}
