//! `mbunet`: quantize, run and analyse masked-binary U-Nets.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use mbunet_core::bitcore::BitTensor;
use mbunet_core::graph::{LayerParams, PrecisionMap, UNetConfig, UnitKind};
use mbunet_core::io::{
    encode_mask, encode_pnm, load_config, read_model, read_pnm, write_model, RawData, RawTensor,
};
use mbunet_core::layers::{
    conv_forward, float_conv, transposed_conv_forward, FloatConvWeights, FloatTensor,
};
use mbunet_core::oracle::{compare_traces, ref_forward};
use mbunet_core::planner::{
    self, cost_scores, marginal_contribution, report, select_mask_plan, unit_costs, Normalization,
    ResultsTable,
};
use mbunet_core::quantizer::{
    build, model_sparsity, synthetic_bundle, zero_bundle, QuantizeOptions, WeightBundle,
};
use mbunet_core::{Error, Parallelism};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Exit codes, one per error class.
mod exit {
    pub const IO: u8 = 3;
    pub const PARSE: u8 = 4;
    pub const SHAPE: u8 = 5;
    pub const UNSUPPORTED: u8 = 6;
    pub const VERIFY: u8 = 7;
    pub const INVALID: u8 = 8;
}

#[derive(Parser)]
#[command(
    name = "mbunet",
    version,
    about = "Bit-packed masked-binary U-Net engine and planner"
)]
struct Cli {
    /// Worker threads; 1 runs everything sequentially. Defaults to all cores.
    #[arg(long, global = true, env = "MBUNET_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quantize a float weight bundle into a model file.
    Quantize {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment a PGM/PPM image.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Output mask, binary PGM with values 0/255.
        #[arg(long)]
        mask: PathBuf,
        /// Optional raw f64 logits tensor.
        #[arg(long)]
        logits: Option<PathBuf>,
    },
    /// Per-layer operation and parameter counts.
    Profile {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Input extent as HxW; defaults to the config's.
        #[arg(long)]
        extent: Option<Extent>,
        /// Also write the table as CSV ("-" for stdout instead of the text table).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Rank the configurable layers by cost score and pick a masking plan.
    Plan {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        w_op: f64,
        /// Number of cheapest layers to mask.
        #[arg(short, long, default_value_t = 4)]
        k: usize,
        #[arg(long, value_enum, default_value_t = Norm::Max)]
        normalization: Norm,
        #[arg(long)]
        extent: Option<Extent>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Mean Dice gain from masking each layer.
    Analyze {
        /// CSV with header `config_id,dice`.
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value_t = 5)]
        max_masked: u32,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Check the engine against the dense oracle on random models.
    Verify {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Base channel width used when no config is given.
        #[arg(long, default_value_t = 16)]
        base: usize,
        #[arg(long, default_value = "64x64")]
        extent: Extent,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        trials: usize,
    },
    /// Time every bit layer against a dense float convolution.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "64x64")]
        extent: Extent,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write a random (or all-zero) weight bundle and optionally a random image.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// All weights zero; the head bias is then the constant logit.
        #[arg(long)]
        zero: bool,
        #[arg(long)]
        image: Option<PathBuf>,
    },
    /// Report configuration constraint violations.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Norm {
    Max,
    MinMax,
}

#[derive(Clone, Copy, Debug)]
struct Extent(usize, usize);

impl std::str::FromStr for Extent {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (h, w) = s.split_once(['x', 'X']).unwrap_or((s, s));
        let p = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| format!("bad extent `{s}`, expected HxW"))
        };
        Ok(Extent(p(h)?, p(w)?))
    }
}

enum Failure {
    Core(Error),
    Verify(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

type CmdResult = Result<(), Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => exit::IO,
        Error::Parse { .. } => exit::PARSE,
        Error::Shape { .. } | Error::MissingLayer(_) | Error::Layout(_) => exit::SHAPE,
        Error::Unsupported(_) => exit::UNSUPPORTED,
        Error::RejectedInput(_) | Error::Invariant(_) => exit::INVALID,
    }
}

fn config_or_default(path: &Option<PathBuf>) -> Result<(UNetConfig, QuantizeOptions), Error> {
    match path {
        Some(p) => load_config(p),
        None => Ok((UNetConfig::default(), QuantizeOptions::default())),
    }
}

fn emit(text: String, csv: String, path: &Option<PathBuf>) -> CmdResult {
    match path {
        Some(p) if p.as_os_str() == "-" => print!("{csv}"),
        Some(p) => {
            print!("{text}");
            fs::write(p, csv)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn par_for(threads: Option<usize>) -> Parallelism {
    match threads {
        Some(1) => Parallelism::Sequential,
        _ => Parallelism::Parallel,
    }
}

fn random_image(c: &UNetConfig, rng: &mut impl Rng) -> FloatTensor {
    let n = c.height * c.width * c.in_channels;
    FloatTensor::new(
        1,
        c.height,
        c.width,
        c.in_channels,
        (0..n).map(|_| rng.random()).collect(),
    )
    .expect("extent arithmetic")
}

fn write_file(path: &Path, bytes: Vec<u8>) -> CmdResult {
    fs::write(path, bytes)?;
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    let par = par_for(cli.threads);
    match cli.command {
        Command::Quantize {
            bundle,
            config,
            out,
        } => {
            let (cfg, opts) = load_config(&config)?;
            let b = WeightBundle::read_dir(&bundle)?;
            let model = build(&cfg, &b, &opts)?;
            write_model(&out, &model)?;
            let sp = model_sparsity(&model);
            println!(
                "wrote {} ({} layers, config id {}, {} masked layers)",
                out.display(),
                model.layers().len(),
                cfg.precision.id(),
                cfg.precision.masked_count()
            );
            if let Some(z) = sp.mean_zero_fraction() {
                println!("mean zero-weight fraction over masked bit layers: {z:.4}");
            }
            Ok(())
        }
        Command::Infer {
            model,
            image,
            mask,
            logits,
        } => {
            let m = read_model(&model)?;
            let img = read_pnm(&image)?;
            let pred = m.forward(&img, par)?;
            let l = &pred.logits;
            write_file(&mask, encode_mask(&pred.mask, l.h, l.w)?)?;
            if let Some(p) = logits {
                RawTensor::new(vec![l.n, l.h, l.w, l.c], RawData::F64(l.data.clone()))?
                    .write(&p)?;
            }
            let fg = pred.mask.iter().filter(|&&v| v != 0).count();
            println!("{}x{} mask, {fg} foreground pixels", l.h, l.w);
            Ok(())
        }
        Command::Profile {
            config,
            extent,
            csv,
        } => {
            let (cfg, _) = config_or_default(&config)?;
            let e = extent.map_or((cfg.height, cfg.width), |e| (e.0, e.1));
            let costs = unit_costs(&cfg, e);
            emit(
                report::profile_table(&costs),
                report::profile_csv(&costs),
                &csv,
            )
        }
        Command::Plan {
            config,
            w_op,
            k,
            normalization,
            extent,
            csv,
        } => {
            let (cfg, _) = config_or_default(&config)?;
            let e = extent.map_or((cfg.height, cfg.width), |e| (e.0, e.1));
            let norm = match normalization {
                Norm::Max => Normalization::Max,
                Norm::MinMax => Normalization::MinMax,
            };
            let r = cost_scores(&cfg, w_op, norm, e)?;
            let plan = select_mask_plan(&r, k)?;
            let mut text = format!(
                "cost scores at {}x{}, w_op = {w_op}, w_param = {}\n",
                e.0, e.1, r.w_param
            );
            text += &report::cost_table(&r);
            let labels: Vec<String> = plan.masked_labels().map(|l| l.to_string()).collect();
            text += &format!(
                "plan k={k}: config id {} masks {}\n",
                plan.id(),
                labels.join(", ")
            );
            emit(text, report::cost_csv(&r), &csv)
        }
        Command::Analyze {
            results,
            max_masked,
            csv,
        } => {
            let text = fs::read_to_string(&results)?;
            let table = ResultsTable::parse_csv(&text).map_err(|e| match e {
                Error::Parse { location, detail } => {
                    Error::parse(format!("{}: {location}", results.display()), detail)
                }
                other => other,
            })?;
            let c = marginal_contribution(&table, max_masked);
            let mut out = format!(
                "{} configurations, pairs with fewer than {max_masked} masked layers\n",
                table.len()
            );
            out += &report::contribution_table(&c);
            emit(out, report::contribution_csv(&c), &csv)
        }
        Command::Verify {
            config,
            base,
            extent,
            seed,
            trials,
        } => {
            let (mut cfg, opts) = match &config {
                Some(p) => load_config(p)?,
                None => (UNetConfig::with_base(base), QuantizeOptions::default()),
            };
            if config.is_none() {
                cfg = cfg.with_extent(extent.0, extent.1);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut exact = 0;
            let mut failures = Vec::new();
            for t in 0..trials {
                let id = rng.random_range(0..PrecisionMap::COUNT);
                let c = cfg.clone().with_precision(PrecisionMap::from_id(id)?);
                let bundle = synthetic_bundle(&c, rng.random());
                let model = build(&c, &bundle, &opts)?;
                let img = random_image(&c, &mut rng);
                let (_, trace) = model.forward_traced(&img, par)?;
                let cmp = compare_traces(&trace, &ref_forward(&c, &bundle, &opts, &img)?);
                if cmp.exact() {
                    exact += 1;
                } else {
                    failures.push(format!(
                        "trial {t} (config id {id}): {}",
                        cmp.mismatches.join("; ")
                    ));
                }
            }
            for f in &failures {
                println!("{f}");
            }
            println!("{exact}/{trials} exact");
            if failures.is_empty() {
                Ok(())
            } else {
                Err(Failure::Verify(format!(
                    "{} of {trials} trials differ",
                    failures.len()
                )))
            }
        }
        Command::Bench {
            model,
            extent,
            repetitions,
            csv,
        } => {
            let m = read_model(&model)?;
            bench(&m, extent, repetitions.max(1), par, &csv)
        }
        Command::Synth {
            config,
            out,
            seed,
            zero,
            image,
        } => {
            let (cfg, _) = config_or_default(&config)?;
            let b = if zero {
                zero_bundle(&cfg, -1.0)
            } else {
                synthetic_bundle(&cfg, seed)
            };
            b.write_dir(&out)?;
            println!("wrote {} layers to {}", b.entries.len(), out.display());
            if let Some(p) = image {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
                write_file(&p, encode_pnm(&random_image(&cfg, &mut rng))?)?;
            }
            Ok(())
        }
        Command::Validate { config } => {
            let (cfg, _) = load_config(&config)?;
            let r = cfg.validate();
            if r.is_ok() {
                println!("ok: {} parameters", planner::total_params(&cfg));
                Ok(())
            } else {
                for v in &r.violations {
                    println!("{v}");
                }
                Err(Failure::Core(Error::Unsupported(format!(
                    "{} violation(s)",
                    r.violations.len()
                ))))
            }
        }
    }
}

fn bench(
    m: &mbunet_core::graph::CompiledModel,
    extent: Extent,
    reps: usize,
    par: Parallelism,
    csv: &Option<PathBuf>,
) -> CmdResult {
    let cfg = m.config().clone().with_extent(extent.0, extent.1);
    let units = mbunet_core::graph::units(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut rows = Vec::new();
    let (mut tb, mut tf) = (0.0, 0.0);
    for (layer, unit) in m.layers().iter().zip(&units) {
        let LayerParams::Bit { weights, .. } = &layer.params else {
            continue;
        };
        let s = &unit.spec;
        let (h, w) = unit.in_extent;
        let segs = unit.in_layout.segments();
        let mut parts = Vec::with_capacity(segs.len());
        for &c in segs {
            let vals: Vec<i8> = (0..h * w * c)
                .map(|_| if rng.random() { 1 } else { -1 })
                .collect();
            parts.push(BitTensor::from_bipolar(1, h, w, c, &vals)?);
        }
        let x = match parts.as_slice() {
            [a, b] => mbunet_core::layers::concat_channels(a, b)?,
            _ => parts.swap_remove(0),
        };
        let fx = FloatTensor::from_bits(&x);
        let fw = FloatConvWeights {
            weights: weights.to_dense().iter().map(|&v| v as f64).collect(),
            bias: vec![0.0; s.c_out],
        };
        let tconv = unit.kind == UnitKind::BitTConv;
        let mut best_bit = f64::MAX;
        for _ in 0..reps {
            let t = Instant::now();
            if tconv {
                transposed_conv_forward(&x, weights, s, par)?;
            } else {
                conv_forward(&x, weights, s, par)?;
            }
            best_bit = best_bit.min(t.elapsed().as_secs_f64());
        }
        // Transposed layers are timed on the bit path only.
        let float = if tconv {
            None
        } else {
            let t = Instant::now();
            float_conv(&fx, &fw, s, par)?;
            Some(t.elapsed().as_secs_f64())
        };
        let ops = planner::unit_costs(&cfg, (cfg.height, cfg.width))
            .into_iter()
            .find(|u| u.name == unit.name)
            .map_or(0, |u| u.ops);
        tb += best_bit;
        if let Some(f) = float {
            tf += f;
        }
        rows.push(vec![
            unit.name.clone(),
            format!("{:?}", weights.kind()).to_lowercase(),
            format!("{:.3}", best_bit * 1e3),
            float.map_or("-".into(), |f| format!("{:.3}", f * 1e3)),
            float.map_or("-".into(), |f| format!("{:.1}", f / best_bit)),
            format!("{:.2}", ops as f64 / best_bit / 1e9),
        ]);
    }
    rows.push(vec![
        "total".into(),
        String::new(),
        format!("{:.3}", tb * 1e3),
        format!("{:.3}", tf * 1e3),
        String::new(),
        String::new(),
    ]);
    let header = [
        "layer", "weights", "bit_ms", "float_ms", "speedup", "bit_gops",
    ];
    let text = format!(
        "{}x{} input, best of {reps} bit runs, {}\n{}",
        extent.0,
        extent.1,
        if par.is_parallel() {
            "parallel"
        } else {
            "one worker"
        },
        report::aligned_table(&header, &rows)
    );
    emit(text, report::csv(&header, &rows), csv)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        #[cfg(feature = "parallel")]
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Verify(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(exit::VERIFY)
        }
    }
}
