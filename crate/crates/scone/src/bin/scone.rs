//! Command-line entry points for synthetic data generation, training,
//! contrastive pretraining, evaluation, negative-label expansion, attribute
//! search, and dataset statistics.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scone::dataset::synth::{generate_synthetic, SyntheticConfig};
use scone::dataset::{compute_stats, DatasetSplit};
use scone::model::SconeModel;
use scone::taxonomy::{expand_dataset, AttributeVocabulary, RelationGraph};
use scone::trainer::checkpoint::Checkpoint;
use scone::trainer::{
    evaluate, plots, predict_table, pretrain_supcon, search_rank, train, write_jsonl, RunConfig,
};
use scone::{Result, SconeError};

#[derive(Parser)]
#[command(name = "scone", about = "Multi-label visual attribute prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// TOML run configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override: random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override: number of supervised epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Override: batch size.
    #[arg(long)]
    batch_size: Option<usize>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(epochs) = self.epochs {
            config.epochs = epochs;
        }
        if let Some(batch) = self.batch_size {
            config.batch_size = batch;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled split and its vocabulary.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5000)]
        n: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Probability of hiding a label (missing annotation).
        #[arg(long, default_value_t = 0.5)]
        dropout: f64,
        /// Class-imbalance exponent (0 = balanced).
        #[arg(long, default_value_t = 1.5)]
        gamma: f64,
    },
    /// Print per-class statistics of a split.
    Stats {
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
    },
    /// Apply negative-label expansion to a split.
    Expand {
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Supervised training.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Contrastive pretraining.
    Pretrain {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Split used for head/medium/tail grouping (defaults to `--split`).
        #[arg(long)]
        train_split: Option<PathBuf>,
        /// Directory for diagnostic plots.
        #[arg(long)]
        plots: Option<PathBuf>,
    },
    /// Rank instances by the product of queried attribute scores.
    Search {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Comma-separated attribute names.
        #[arg(long)]
        query: String,
        #[arg(long, default_value_t = 10)]
        top_n: usize,
        /// Write a contact sheet of the top hits.
        #[arg(long)]
        sheet: Option<PathBuf>,
    },
}

/// Resolve a possibly relative path against SCONE_DATA_ROOT when set.
fn data_path(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os("SCONE_DATA_ROOT") {
        Some(root) => PathBuf::from(root).join(path),
        None => path.to_path_buf(),
    }
}

fn load_checkpoint(path: &Path) -> Result<(RunConfig, SconeModel)> {
    let checkpoint = Checkpoint::load(&data_path(path))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = SconeModel::new(checkpoint.config.model.clone(), &mut rng)?;
    checkpoint.restore(&mut model)?;
    Ok((checkpoint.config, model))
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Synth { out, n, size, seed, dropout, gamma } => {
            let config = SyntheticConfig {
                n_instances: n,
                image_size: size,
                seed,
                label_dropout: dropout,
                imbalance_exponent: gamma,
                ..Default::default()
            };
            let (split, vocab) = generate_synthetic(&config)?;
            let out = data_path(&out);
            std::fs::create_dir_all(&out)?;
            split.save(&out.join("split.json"))?;
            std::fs::write(out.join("vocab.tsv"), vocab.to_file_format())?;
            println!("wrote {} instances to {}", split.len(), out.display());
        }
        Command::Stats { split, vocab } => {
            let split = DatasetSplit::load(&data_path(&split))?;
            let vocab = AttributeVocabulary::load(&data_path(&vocab))?;
            let stats = compute_stats(&split)?;
            print!("{}", stats.to_text(&vocab));
        }
        Command::Expand { split, vocab, graph, out } => {
            let split = DatasetSplit::load(&data_path(&split))?;
            let vocab = AttributeVocabulary::load(&data_path(&vocab))?;
            let graph = RelationGraph::load(&data_path(&graph))?;
            let (expanded, report) = expand_dataset(&split, &vocab, &graph);
            expanded.save(&data_path(&out))?;
            print!("{}", report.to_text(&vocab));
        }
        Command::Train { config, train: train_path, val, vocab, graph, out } => {
            let config = config.load()?;
            let train_split = DatasetSplit::load(&data_path(&train_path))?;
            let val_split = DatasetSplit::load(&data_path(&val))?;
            let vocab = AttributeVocabulary::load(&data_path(&vocab))?;
            let graph = match graph {
                Some(path) => Some(RelationGraph::load(&data_path(&path))?),
                None => None,
            };
            let outcome = train(&config, &train_split, &val_split, &vocab, graph.as_ref())?;
            let out = data_path(&out);
            std::fs::create_dir_all(&out)?;
            outcome.best.save(&out.join("best.json"))?;
            let mut model = outcome.model;
            Checkpoint::capture(&config, &mut model).save(&out.join("final.json"))?;
            write_jsonl(&outcome.log, &out.join("log.jsonl"))?;
            plots::loss_curve(&outcome.log, &out.join("loss.png"))?;
            println!("best validation mAP {:.4}", outcome.best_val_map);
        }
        Command::Pretrain { config, train, vocab, out } => {
            let config = config.load()?;
            let split = DatasetSplit::load(&data_path(&train))?;
            let vocab = AttributeVocabulary::load(&data_path(&vocab))?;
            let (mut model, log) = pretrain_supcon(&config, &split, &vocab)?;
            let out = data_path(&out);
            std::fs::create_dir_all(&out)?;
            Checkpoint::capture(&config, &mut model).save(&out.join("pretrained.json"))?;
            write_jsonl(&log, &out.join("log.jsonl"))?;
            println!("pretrained for {} epochs", log.len());
        }
        Command::Eval { checkpoint, split, vocab, train_split, plots: plot_dir } => {
            let (config, model) = load_checkpoint(&checkpoint)?;
            let split = DatasetSplit::load(&data_path(&split))?;
            let vocab = AttributeVocabulary::load(&data_path(&vocab))?;
            let stats_split = match train_split {
                Some(path) => DatasetSplit::load(&data_path(&path))?,
                None => split.clone(),
            };
            let stats = compute_stats(&stats_split)?;
            let report = evaluate(&model, &split, &vocab, &stats, &config)?;
            print!("{report}");
            if let Some(dir) = plot_dir {
                let dir = data_path(&dir);
                std::fs::create_dir_all(&dir)?;
                plots::group_bars(&report.group_map, &dir.join("group_map.png"))?;
            }
        }
        Command::Search { checkpoint, split, vocab, query, top_n, sheet } => {
            let (config, model) = load_checkpoint(&checkpoint)?;
            let split = DatasetSplit::load(&data_path(&split))?;
            let vocab = AttributeVocabulary::load(&data_path(&vocab))?;
            let table = predict_table(&model, &split, &vocab, &config.preprocess)?;
            let query: Vec<String> = query.split(',').map(|s| s.trim().to_string()).collect();
            let ranked = search_rank(&table, &vocab, &query, top_n)?;
            for (row, id, score) in &ranked {
                println!("{id}\t{row}\t{score:.6}");
            }
            if let Some(sheet_path) = sheet {
                let images: Vec<_> = ranked
                    .iter()
                    .map(|(row, _, _)| {
                        scone::dataset::preprocess::preprocess_instance(
                            &split.records[*row],
                            &vocab,
                            &config.preprocess,
                            false,
                            0,
                        )
                        .map(|input| input.image)
                    })
                    .collect::<Result<_>>()?;
                plots::contact_sheet(&images, 5, &data_path(&sheet_path))?;
            }
        }
    }
    Ok(())
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err}");
        std::process::exit(match err {
            SconeError::InvalidConfig(_) => 2,
            _ => 1,
        });
    }
}
