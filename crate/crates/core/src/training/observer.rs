use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{save_checkpoint, TrainConfig, TrainState, ValRecord};
use crate::error::Result;
use crate::tensor::Element;
use crate::unetpp::UNetPPModel;

/// Callbacks from [`train`](super::train).
pub trait TrainObserver<E: Element> {
    fn step(&mut self, _step: u64, _loss: f64, _lr: f64) -> Result<()> {
        Ok(())
    }

    fn validation(
        &mut self,
        _record: &ValRecord,
        _is_best: bool,
        _model: &UNetPPModel<E>,
        _state: &TrainState<E>,
    ) -> Result<()> {
        Ok(())
    }

    fn checkpoint(&mut self, _model: &UNetPPModel<E>, _state: &TrainState<E>) -> Result<()> {
        Ok(())
    }
}

pub struct NoObserver;

impl<E: Element> TrainObserver<E> for NoObserver {}

/// Appends `train_log.csv` / `val_log.csv` and writes `checkpoint.nusr`
/// and `best.nusr` inside a run directory.
pub struct RunLogger {
    dir: PathBuf,
    config: TrainConfig,
    train_log: BufWriter<File>,
    val_log: BufWriter<File>,
}

fn open_log(path: &Path, header: &str) -> Result<BufWriter<File>> {
    let fresh = !path.exists();
    let mut w = BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?);
    if fresh {
        writeln!(w, "{header}")?;
    }
    Ok(w)
}

impl RunLogger {
    pub const TRAIN_LOG: &'static str = "train_log.csv";
    pub const VAL_LOG: &'static str = "val_log.csv";
    pub const LATEST: &'static str = "checkpoint.nusr";
    pub const BEST: &'static str = "best.nusr";

    pub fn new(dir: impl Into<PathBuf>, config: &TrainConfig) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            train_log: open_log(&dir.join(Self::TRAIN_LOG), "step,loss,lr")?,
            val_log: open_log(&dir.join(Self::VAL_LOG), "step,val_psnr,val_ssim")?,
            dir,
            config: config.clone(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn flush(&mut self) -> Result<()> {
        self.train_log.flush()?;
        self.val_log.flush()?;
        Ok(())
    }
}

impl<E: Element> TrainObserver<E> for RunLogger {
    fn step(&mut self, step: u64, loss: f64, lr: f64) -> Result<()> {
        writeln!(self.train_log, "{step},{loss},{lr}")?;
        Ok(())
    }

    fn validation(
        &mut self,
        record: &ValRecord,
        is_best: bool,
        model: &UNetPPModel<E>,
        state: &TrainState<E>,
    ) -> Result<()> {
        writeln!(self.val_log, "{},{:.6},{:.6}", record.step, record.psnr, record.ssim)?;
        self.flush()?;
        if is_best {
            save_checkpoint(&self.dir.join(Self::BEST), model, state, &self.config)?;
        }
        Ok(())
    }

    fn checkpoint(&mut self, model: &UNetPPModel<E>, state: &TrainState<E>) -> Result<()> {
        self.flush()?;
        save_checkpoint(&self.dir.join(Self::LATEST), model, state, &self.config)
    }
}
