use std::collections::BTreeSet;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::warn;

use segaudit::config::{Config, Overrides, SplitMode};
use segaudit::export::{export_bundle, ClassGroup};
use segaudit::io::{to_json_bytes, write_file};
use segaudit::manifest::LoadedManifest;
use segaudit::pipeline::{self, render_report};
use segaudit::records::{read_candidates, read_registry};
use segaudit::synth::{self, SynthConfig};
use segaudit::{perturb, service};
use segaudit_core::evaluate::Benchmark;

#[derive(Parser)]
#[command(
    name = "segaudit",
    version,
    about = "Find label errors in semantic-segmentation datasets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Dataset manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// TOML config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Component matching threshold.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self, extra: Overrides) -> anyhow::Result<(LoadedManifest, Config)> {
        let overrides = Overrides {
            tau: self.tau,
            seed: self.seed,
            ..extra
        };
        let cfg = Config::load(self.config.as_deref(), &overrides)?;
        let lm =
            LoadedManifest::load(&self.manifest).with_context(|| format!("loading {}", self.manifest.display()))?;
        Ok((lm, cfg))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build a benchmark by dropping ground-truth components.
    Perturb {
        #[command(flatten)]
        common: Common,
        /// Maximum drop probability.
        #[arg(long)]
        p_hat: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Match, train the meta classifier, rank candidates and evaluate.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// `half` or `kfold:K`.
        #[arg(long)]
        split_mode: Option<SplitMode>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a candidate file against the registry entries of the searched images.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Split the candidates came from; decides which images are scored.
        #[arg(long)]
        split_mode: Option<SplitMode>,
        #[arg(long)]
        candidates: PathBuf,
        /// Fixed score threshold instead of the F1-maximizing one.
        #[arg(long)]
        threshold: Option<f64>,
        /// Write the evaluation as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a review bundle with the top-ranked candidates and their crops.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        candidates: PathBuf,
        /// Candidates per split when no class groups are given.
        #[arg(long, default_value_t = 100)]
        top: usize,
        /// `class[,class...]:quota`, repeatable.
        #[arg(long = "group")]
        groups: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a review bundle over HTTP.
    Serve {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
        host: IpAddr,
        #[arg(long, default_value = "reviewer")]
        reviewer: String,
        /// Verdict log; defaults to `verdicts.jsonl` in the bundle.
        #[arg(long)]
        verdicts: Option<PathBuf>,
    },
    /// Generate synthetic scenes with a simulated predictor.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        scenes: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Perturb { common, p_hat, out } => {
            let (lm, cfg) = common.load(Overrides {
                p_hat,
                ..Default::default()
            })?;
            let summary = perturb::run_perturb(&lm, &cfg, &out)?;
            println!(
                "{} registry entries from {} dropped objects ({:.1} expected) -> {}",
                summary.registry_entries,
                summary.dropped_objects,
                summary.expected_drops,
                out.join("manifest.json").display()
            );
        }
        Command::Pipeline {
            common,
            split_mode,
            out,
        } => {
            let (lm, cfg) = common.load(Overrides {
                split_mode,
                ..Default::default()
            })?;
            let output = pipeline::run(&lm, &cfg)?;
            pipeline::write_outputs(&out, &lm, &output)?;
            let names = lm.manifest.classes.iter().map(|c| (c.id, c.name.clone())).collect();
            print!("{}", render_report(&output.report, &names));
        }
        Command::Eval {
            common,
            split_mode,
            candidates,
            threshold,
            out,
        } => {
            let (lm, cfg) = common.load(Overrides {
                split_mode,
                ..Default::default()
            })?;
            let Some(reg) = &lm.manifest.registry else {
                bail!("manifest has no registry to evaluate against");
            };
            let records = &lm.manifest.records;
            let searched: BTreeSet<&str> = pipeline::plan_rounds(records, cfg.split_mode, cfg.seed)?
                .iter()
                .flat_map(|r| r.search.iter().map(|&i| records[i].image.as_str()))
                .collect();
            let mut registry = read_registry(&lm.resolve(reg))?;
            registry.entries.retain(|e| searched.contains(e.image.as_str()));
            let cands = read_candidates(&candidates)?;
            if let Some(c) = cands.iter().find(|c| !searched.contains(c.image.as_str())) {
                bail!(
                    "candidate image `{}` is not searched under split mode {}; pass the --split-mode the pipeline ran with",
                    c.image,
                    cfg.split_mode
                );
            }
            let bench = Benchmark::new(searched.iter().copied(), &registry, cfg.tau)?;
            let outcome = match threshold {
                Some(t) => bench.evaluate(&cands, t)?,
                None if cands.is_empty() => bench.evaluate(&cands, 1.0)?,
                None => bench.best_f1(&cands)?,
            };
            let curve = bench.average_precision(&cands)?;
            let per_class = bench.per_class(&cands, outcome.t)?;
            let result = serde_json::json!({
                "tau": cfg.tau,
                "split_mode": cfg.split_mode,
                "images": searched.len(),
                "registry_entries": registry.len(),
                "outcome": outcome,
                "ap": curve.ap,
                "pr_curve": curve.points,
                "per_class": per_class,
            });
            println!(
                "t {:.4}  TP {}  FN {}  FP {}  prec {:.4}  rec {:.4}  F1 {:.4}  AP {:.4}",
                outcome.t, outcome.tp, outcome.fn_, outcome.fp, outcome.precision, outcome.recall, outcome.f1, curve.ap
            );
            if let Some(p) = out {
                write_file(&p, &to_json_bytes(&result))?;
            }
        }
        Command::Export {
            common,
            candidates,
            top,
            groups,
            out,
        } => {
            let (lm, _) = common.load(Overrides::default())?;
            let groups = groups
                .iter()
                .map(|g| ClassGroup::parse(g, &lm.manifest.classes))
                .collect::<Result<Vec<_>, _>>()?;
            if !groups.is_empty() && top != 100 {
                warn!("--top is ignored when class groups are given");
            }
            let index = export_bundle(&lm, &candidates, top, &groups, &out)?;
            println!("{} candidates -> {}", index.entries.len(), out.display());
        }
        Command::Serve {
            bundle,
            port,
            host,
            reviewer,
            verdicts,
        } => {
            let verdicts = verdicts.unwrap_or_else(|| bundle.join("verdicts.jsonl"));
            service::serve(&bundle, &verdicts, &reviewer, SocketAddr::new(host, port))?;
        }
        Command::Synth { out, scenes, seed } => {
            let cfg = SynthConfig {
                scenes,
                seed,
                ..SynthConfig::default()
            };
            let m = synth::generate(&out, &cfg)?;
            println!("{} scenes -> {}", m.records.len(), out.join("manifest.json").display());
        }
    }
    Ok(())
}
