use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gaussimg::bsp::{bench_render, format_bench_table, render_image_blocked, BenchConfig};
use gaussimg::codec::Header;
use gaussimg::fit::{fit_with, Checkpoint, EvalRecord, FitConfig, FitObserver};
use gaussimg::{
    build_partition, decode, encode, load_image, psnr, save_image, ssim, BitDepth, Error, ErrorKind, Renderer,
};

#[derive(Parser)]
#[command(name = "gaussimg", version, about = "Encode images as sets of 2D Gaussians")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a Gaussian set to a PNG and write an IGS2 file.
    Encode(EncodeArgs),
    /// Render an IGS2 file to PNG at any resolution.
    Decode(DecodeArgs),
    /// Print header fields and size accounting of an IGS2 file.
    Info {
        #[arg(long)]
        input: PathBuf,
    },
    /// PSNR and SSIM between two PNGs.
    Metrics {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Time pixel queries through partitions of varying granularity.
    Bench(BenchArgs),
    /// List and verify the checkpoints written by `encode --lod-dir`.
    Lod(LodArgs),
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Gaussian budget.
    #[arg(long, default_value_t = 8000)]
    gaussians: usize,
    #[arg(long, default_value_t = 50_000)]
    iters: usize,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 0.3)]
    lambda_init: f64,
    #[arg(long, default_value_t = 0.8)]
    lambda_opt: f64,
    /// Pixels sampled per iteration.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest block size of the stored partition.
    #[arg(long, default_value_t = 64)]
    nmax: usize,
    /// Iterations before the first densification.
    #[arg(long, default_value_t = 10_000)]
    warmup: usize,
    /// Iterations between densifications.
    #[arg(long, default_value_t = 5_000)]
    densify_interval: usize,
    #[arg(long, default_value_t = 1_000)]
    eval_interval: usize,
    /// Directory for one IGS2 file per densification stage.
    #[arg(long)]
    lod_dir: Option<PathBuf>,
    /// Path for the evaluation log.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Defaults to the width stored in the file.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Render with the global top-K search even when blocks are stored.
    #[arg(long)]
    no_accel: bool,
    #[arg(long)]
    sixteen_bit: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pixels: usize,
    #[arg(long, default_value = "1024,256,128,64,43", value_delimiter = ',')]
    nmax_list: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct LodArgs {
    #[arg(long)]
    dir: PathBuf,
    /// Also render every checkpoint at this size.
    #[arg(long, requires = "height")]
    width: Option<usize>,
    #[arg(long, requires = "width")]
    height: Option<usize>,
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Io => 3,
        ErrorKind::Format => 4,
        ErrorKind::Input => 5,
        ErrorKind::Fit => 6,
    }
}

struct Progress {
    quiet: bool,
    lod_dir: Option<PathBuf>,
    width: usize,
    height: usize,
    k: usize,
    nmax: usize,
}

impl FitObserver for Progress {
    fn on_eval(&mut self, record: &EvalRecord) {
        if !self.quiet {
            eprintln!("{record}");
        }
    }

    fn on_checkpoint(&mut self, c: &Checkpoint<'_>) -> gaussimg::Result<()> {
        let Some(dir) = &self.lod_dir else { return Ok(()) };
        let partition = build_partition(c.set, self.nmax)?;
        let bytes = encode(c.set, Some(&partition), self.width, self.height, self.k)?;
        let path = dir.join(format!("lod{}_n{}.igs2", c.stage, c.set.len()));
        fs::write(&path, bytes)?;
        if !self.quiet {
            eprintln!("wrote {}", path.display());
        }
        Ok(())
    }
}

fn cmd_encode(a: EncodeArgs) -> gaussimg::Result<()> {
    let img = load_image(&a.input)?;
    let config = FitConfig {
        k: a.k,
        lambda_init: a.lambda_init,
        lambda_opt: a.lambda_opt,
        iterations: a.iters,
        samples_per_iter: a.samples,
        eval_interval: a.eval_interval,
        warmup_iters: a.warmup,
        densify_interval: a.densify_interval,
        seed: a.seed,
        ..FitConfig::new(a.gaussians)
    };
    config.validate()?;
    if let Some(dir) = &a.lod_dir {
        fs::create_dir_all(dir)?;
    }
    let mut progress = Progress {
        quiet: a.quiet,
        lod_dir: a.lod_dir.clone(),
        width: img.width(),
        height: img.height(),
        k: a.k,
        nmax: a.nmax,
    };
    let (set, report) = fit_with(&img, &config, &mut progress)?;
    let partition = build_partition(&set, a.nmax)?;
    fs::write(&a.output, encode(&set, Some(&partition), img.width(), img.height(), a.k)?)?;
    if let Some(path) = &a.report {
        fs::write(path, report.to_log())?;
    }
    if !a.quiet {
        eprintln!("wrote {} ({} gaussians, {} blocks)", a.output.display(), set.len(), partition.block_count());
    }
    Ok(())
}

fn cmd_decode(a: DecodeArgs) -> gaussimg::Result<()> {
    let d = decode(&fs::read(&a.input)?)?;
    let (w, h) = (a.width.unwrap_or(d.width), a.height.unwrap_or(d.height));
    let img = match (&d.partition, a.no_accel) {
        (Some(p), false) => render_image_blocked(&d.set, p, w, h, d.k)?,
        _ => Renderer::new(&d.set)?.render_image(w, h, d.k)?,
    };
    let depth = if a.sixteen_bit { BitDepth::Sixteen } else { BitDepth::Eight };
    save_image(&img, &a.output, depth)
}

fn cmd_info(input: &Path) -> gaussimg::Result<()> {
    let bytes = fs::read(input)?;
    let header = Header::parse(&bytes)?;
    let d = decode(&bytes)?;
    println!("format IGS2 v{}", gaussimg::codec::VERSION);
    println!("resolution {}x{}", header.width, header.height);
    println!("k {}", header.k);
    println!("gaussians {}", header.n_g);
    println!("blocks {}", header.n_b);
    if let Some(p) = &d.partition {
        println!("largest_block {}", p.n_max());
    }
    println!("{}", header.size_report());
    Ok(())
}

fn cmd_metrics(reference: &Path, test: &Path) -> gaussimg::Result<()> {
    let (a, b) = (load_image(reference)?, load_image(test)?);
    let p = psnr(&a, &b)?;
    let s = ssim(&a, &b)?;
    println!("PSNR {p:?}, SSIM {s:?}");
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> gaussimg::Result<()> {
    let d = decode(&fs::read(&a.input)?)?;
    let cfg = BenchConfig { pixels: a.pixels, trials: a.trials, k: d.k, seed: a.seed, ..BenchConfig::default() };
    let rows = bench_render(&d.set, &a.nmax_list, &cfg)?;
    print!("{}", format_bench_table(&rows));
    Ok(())
}

fn cmd_lod(a: LodArgs) -> gaussimg::Result<()> {
    let mut paths: Vec<PathBuf> = fs::read_dir(&a.dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "igs2"));
    let mut entries = Vec::new();
    for path in paths {
        let d = decode(&fs::read(&path)?)?;
        entries.push((d.set.len(), path, d));
    }
    entries.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    for (count, path, d) in &entries {
        let blocks = d.partition.as_ref().map_or(0, |p| p.block_count());
        let report = gaussimg::SizeReport::new(*count, blocks, d.width, d.height);
        let name = path.file_name().unwrap_or_default().to_string_lossy();
        println!("{name} gaussians={count} blocks={blocks} bpp={:.4}", report.bpp());
        if let (Some(w), Some(h)) = (a.width, a.height) {
            match &d.partition {
                Some(p) => render_image_blocked(&d.set, p, w, h, d.k)?,
                None => Renderer::new(&d.set)?.render_image(w, h, d.k)?,
            };
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Encode(a) => cmd_encode(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Info { input } => cmd_info(&input),
        Command::Metrics { reference, test } => cmd_metrics(&reference, &test),
        Command::Bench(a) => cmd_bench(a),
        Command::Lod(a) => cmd_lod(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
