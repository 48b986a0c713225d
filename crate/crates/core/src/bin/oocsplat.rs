use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use oocsplat::commands::{cmd_build, cmd_compact, cmd_stats, cmd_synth, cmd_train};
use oocsplat::config::RunConfig;
use oocsplat::log_store::StoreOptions;
use oocsplat::trainer::scene::SynthSpec;
use oocsplat::trainer::OrderMode;

#[derive(Parser)]
#[command(name = "oocsplat", version, about = "Out-of-core block-streamed splat training")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sort and block a scene, write the base segment and layout sidecar.
    Build {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = 4096)]
        block_size: usize,
        /// Random permutation instead of Morton order.
        #[arg(long)]
        no_morton: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train on a built store and write stats.csv, summary.json, manifest.json.
    Train(TrainArgs),
    /// Merge patch segments into a new base segment.
    Compact {
        #[arg(long)]
        store: PathBuf,
    },
    /// Recompute a report's summary from its CSV and check it.
    Stats {
        #[arg(long)]
        report: PathBuf,
    },
    /// Generate a synthetic toy scene, views and target images.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        primitives: usize,
        #[arg(long, default_value_t = 30)]
        views: usize,
        #[arg(long, default_value_t = 16.0)]
        extent: f64,
        #[arg(long, default_value_t = 6.0)]
        view_size: f64,
        #[arg(long, default_value_t = 16)]
        resolution: u32,
        #[arg(long, default_value_t = 1.0)]
        laps: f64,
        #[arg(long, default_value_t = 0.2)]
        jitter: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Order {
    Shuffle,
    Trajectory,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Build the store from this scene first.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    views: Option<PathBuf>,
    #[arg(long)]
    targets: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long, value_enum)]
    order: Option<Order>,
    #[arg(long)]
    arena_blocks: Option<usize>,
    #[arg(long)]
    cache_bytes: Option<u64>,
    #[arg(long)]
    transfer_latency_us: Option<u64>,
    #[arg(long)]
    read_latency_us: Option<u64>,
    #[arg(long)]
    write_latency_us: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    no_overlap: bool,
    #[arg(long)]
    no_tide: bool,
    #[arg(long)]
    no_morton: bool,
}

impl TrainArgs {
    fn resolve(self) -> oocsplat::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_toml_file(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident).+ <- $v:expr) => {
                if let Some(v) = $v {
                    c.$($field).+ = v;
                }
            };
        }
        if self.scene.is_some() {
            c.scene = self.scene;
        }
        set!(store <- self.store);
        set!(views <- self.views);
        set!(targets <- self.targets);
        set!(out <- self.out);
        set!(seed <- self.seed);
        set!(iterations <- self.iterations);
        set!(batch_size <- self.batch_size);
        set!(block_size <- self.block_size);
        set!(arena_blocks <- self.arena_blocks);
        set!(cache_bytes <- self.cache_bytes);
        set!(transfer_latency_us <- self.transfer_latency_us);
        set!(read_latency_us <- self.read_latency_us);
        set!(write_latency_us <- self.write_latency_us);
        set!(scheduler.lambda <- self.lambda);
        set!(scheduler.gamma <- self.gamma);
        set!(scheduler.beta <- self.beta);
        set!(adam.lr <- self.lr);
        if let Some(o) = self.order {
            c.order = match o {
                Order::Shuffle => OrderMode::Shuffle,
                Order::Trajectory => OrderMode::Trajectory,
            };
        }
        c.overlap &= !self.no_overlap;
        c.tide &= !self.no_tide;
        c.morton &= !self.no_morton;
        c.validate()?;
        Ok(c)
    }
}

fn run(cli: Cli) -> oocsplat::Result<ExitCode> {
    match cli.cmd {
        Cmd::Build {
            scene,
            store,
            block_size,
            no_morton,
            seed,
        } => {
            let r = cmd_build(&scene, &store, block_size, !no_morton, seed, StoreOptions::default())?;
            println!(
                "built {} primitives (D = {}) into {} blocks of {} bytes; base segment {} bytes; mean bound radius {:.4}; {:.1} ms",
                r.n_primitives, r.dim, r.k_blocks, r.block_bytes, r.base_bytes, r.mean_radius, r.build_ms
            );
        }
        Cmd::Train(args) => {
            let cfg = args.resolve()?;
            let out = cmd_train(&cfg)?;
            let s = &out.report.summary;
            println!("iterations          {}", s.iterations);
            println!("mean wall ms        {:.3}", s.mean_wall_ms);
            println!("mean wait ms        {:.3}", s.mean_wait_ms);
            println!("transfer bytes/iter {:.0}", s.transfer_bytes_per_iter);
            println!("cache hit rate      {:.4}", s.cache_hit_rate);
            println!("eviction rate       {:.5}", s.eviction_rate);
            println!("cold restart ratio  {:.5}", s.cold_restart_ratio);
            println!("final loss          {:.6e}", s.final_loss);
            println!("final psnr          {:.3} dB", out.report.final_psnr);
            println!("report written to   {}", cfg.out.display());
        }
        Cmd::Compact { store } => {
            let n = cmd_compact(&store)?;
            println!("{n} bytes reclaimed");
        }
        Cmd::Stats { report } => {
            let check = cmd_stats(&report)?;
            let s = &check.recomputed;
            println!("iterations            {}", s.iterations);
            println!("mean wall ms          {:.3}", s.mean_wall_ms);
            println!("mean compute ms       {:.3}", s.mean_compute_ms);
            println!("mean wait ms          {:.3}", s.mean_wait_ms);
            println!("busy fraction         {:.4}", s.busy_fraction);
            println!("stage-in bytes/iter   {:.0}", s.stage_in_bytes_per_iter);
            println!("evict bytes/iter      {:.0}", s.evict_bytes_per_iter);
            println!("cache hit rate        {:.4}", s.cache_hit_rate);
            println!("eviction rate         {:.5}", s.eviction_rate);
            println!("re-admission rate     {:.5}", s.readmission_rate);
            println!("cold restart ratio    {:.5}", s.cold_restart_ratio);
            println!("mean resident streak  {:.3}", s.mean_resident_streak);
            println!("final loss            {:.6e}", s.final_loss);
            println!("final psnr            {:.3} dB", check.reported.final_psnr);
            if !check.mismatches.is_empty() {
                eprintln!("summary.json disagrees with stats.csv: {}", check.mismatches.join(", "));
                return Ok(ExitCode::from(2));
            }
        }
        Cmd::Synth {
            out,
            primitives,
            views,
            extent,
            view_size,
            resolution,
            laps,
            jitter,
            seed,
        } => {
            let spec = SynthSpec {
                n_primitives: primitives,
                extent,
                n_views: views,
                view_size,
                resolution,
                laps,
                seed,
                ..SynthSpec::default()
            };
            let p = cmd_synth(&spec, jitter, &out)?;
            println!(
                "wrote {}, {}, {}, {}",
                p.scene.display(),
                p.truth.display(),
                p.views.display(),
                p.targets.display()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
