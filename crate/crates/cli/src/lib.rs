//! Experiment runner and analysis tools on top of `stc-core`.

pub mod codec_tool;
pub mod config;
pub mod congruence;

use std::io::Write;
use std::time::Instant;

use stc_core::data::{load_idx_dir, synth_blobs, Dataset};
use stc_core::federation::Federation;
use stc_core::partition::{histogram, split, volume_fractions, SplitSpec};
use stc_core::{Error, Result};

use config::{DatasetChoice, RunConfig};

pub const CSV_HEADER: &str = "round,iterations,test_accuracy,bits_up_cum,bits_down_cum";

/// Exit status for a failed command: 2 configuration, 3 data, 4 protocol or codec.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::Argument(_) => 2,
        Error::Data(_) | Error::Format(_) | Error::Partition(_) | Error::Io(_) => 3,
        Error::Decode(_) | Error::Protocol(_) | Error::Shape { .. } => 4,
    }
}

/// One evaluation row of a training run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunRecord {
    pub round: usize,
    pub iterations: usize,
    pub test_accuracy: f64,
    pub bits_up_cum: u64,
    pub bits_down_cum: u64,
    pub wall_seconds: f64,
}

impl RunRecord {
    pub fn csv_row(&self, wall_clock: bool) -> String {
        let mut row = format!(
            "{},{},{:.6},{},{}",
            self.round, self.iterations, self.test_accuracy, self.bits_up_cum, self.bits_down_cum
        );
        if wall_clock {
            row.push_str(&format!(",{:.3}", self.wall_seconds));
        }
        row
    }
}

/// Synthetic stand-in data: 10 classes in 20 dimensions.
const BLOB_CLASSES: usize = 10;
const BLOB_DIM: usize = 20;
const BLOB_TRAIN_PER_CLASS: usize = 600;
const BLOB_TEST_PER_CLASS: usize = 100;

/// Loads (train, test) as configured.
pub fn load_datasets(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    match cfg.dataset {
        DatasetChoice::Idx => {
            let train = load_idx_dir(&cfg.data_dir, "train")?;
            let test = load_idx_dir(&cfg.data_dir, "t10k")?;
            Ok((train, test))
        }
        DatasetChoice::Blobs => {
            let all = synth_blobs(
                BLOB_CLASSES,
                BLOB_TRAIN_PER_CLASS + BLOB_TEST_PER_CLASS,
                BLOB_DIM,
                0.5,
                cfg.fed.seed,
            )?;
            // samples are interleaved by class, so a prefix is class-balanced
            let cut = BLOB_CLASSES * BLOB_TRAIN_PER_CLASS;
            let train = all.subset(&(0..cut).collect::<Vec<_>>())?;
            let test = all.subset(&(cut..all.len()).collect::<Vec<_>>())?;
            Ok((train, test))
        }
    }
}

/// Runs the configured experiment, streaming CSV rows to `out`.
pub fn run_training(cfg: &RunConfig, out: &mut dyn Write, wall_clock: bool) -> Result<Vec<RunRecord>> {
    let fed_cfg = cfg.fed_config()?;
    let (train, test) = load_datasets(cfg)?;
    let spec = cfg.model.spec(train.dim(), train.num_classes().max(test.num_classes()));
    let mut fed = Federation::new(fed_cfg, spec, &train)?;
    let start = Instant::now();
    let mut header = CSV_HEADER.to_string();
    if wall_clock {
        header.push_str(",wall_seconds");
    }
    writeln!(out, "{header}")?;
    let mut records = Vec::new();
    let mut write_err = None;
    fed.run(&test, |e| {
        let rec = RunRecord {
            round: e.round,
            iterations: e.iterations,
            test_accuracy: e.test_accuracy,
            bits_up_cum: e.bits_up,
            bits_down_cum: e.bits_down,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        if write_err.is_none() {
            if let Err(err) = writeln!(out, "{}", rec.csv_row(wall_clock)).and_then(|_| out.flush()) {
                write_err = Some(err);
            }
        }
        records.push(rec);
    })?;
    if let Some(err) = write_err {
        return Err(err.into());
    }
    Ok(records)
}

/// Per-client split summary: `client_id,size,distinct_classes,class_0,...`.
pub fn split_table(cfg: &RunConfig) -> Result<String> {
    let (train, _) = load_datasets(cfg)?;
    let f = &cfg.fed;
    let spec = SplitSpec {
        num_clients: f.num_clients,
        classes_per_client: f.classes_per_client,
        num_classes: train.num_classes(),
        fractions: volume_fractions(f.alpha, f.gamma, f.num_clients),
        seed: f.seed,
    };
    let shards = split(train.labels(), &spec)?;
    let mut out = String::from("client_id,size,distinct_classes");
    for c in 0..train.num_classes() {
        out.push_str(&format!(",class_{c}"));
    }
    out.push('\n');
    for (i, shard) in shards.iter().enumerate() {
        let h = histogram(train.labels(), shard, train.num_classes());
        let distinct = h.iter().filter(|&&n| n > 0).count();
        out.push_str(&format!("{i},{},{distinct}", shard.len()));
        for n in h {
            out.push_str(&format!(",{n}"));
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config { key: "k".into(), reason: "r".into() }), 2);
        assert_eq!(exit_code(&Error::Data("x".into())), 3);
        assert_eq!(exit_code(&Error::Decode("x".into())), 4);
    }

    #[test]
    fn blob_training_run() {
        let cfg = RunConfig::parse(
            "dataset = blobs\nmethod = stc\nnum_clients = 5\nparticipation = 1\np_up = 0.1\np_down = 0.1\ntotal_iterations = 30\neval_every = 10\nlr = 0.1\n",
        )
        .unwrap();
        let mut buf = Vec::new();
        let recs = run_training(&cfg, &mut buf, false).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 4);
        assert_eq!(recs.last().unwrap().iterations, 30);
        assert!(lines[3].starts_with("30,30,"));
    }

    #[test]
    fn split_summary() {
        let cfg = RunConfig::parse("dataset = blobs\nnum_clients = 10\nclasses_per_client = 2\n").unwrap();
        let table = split_table(&cfg).unwrap();
        let rows: Vec<&str> = table.lines().collect();
        assert_eq!(rows.len(), 11);
        assert!(rows[0].starts_with("client_id,size,distinct_classes,class_0"));
        for row in &rows[1..] {
            let cols: Vec<usize> = row.split(',').map(|c| c.parse().unwrap()).collect();
            assert_eq!(cols[1], 600);
            assert_eq!(cols[3..].iter().sum::<usize>(), 600);
            assert_eq!(cols[3..].iter().filter(|&&n| n > 0).count(), cols[2]);
        }
    }
}
