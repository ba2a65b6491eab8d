//! Versioned binary checkpoint container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   8 bytes  "SPICKPT\0"
//! version u32      currently 1
//! config  u64 length + JSON bytes (TrainConfig echo)
//! epoch   u64      completed epochs
//! adam_t  3 x u64  step counters (mask, generator, discriminator)
//! history u64 count, then per epoch: u64 epoch + 5 f64
//!                  (mse, vgg, adv, d_loss, val_psnr)
//! arrays  u64 count, then per array:
//!         u16 name length + UTF-8 name
//!         u8 ndim + ndim x u64 dims
//!         dims-product x f64 data
//! ```
//!
//! Arrays cover parameter values, Adam moments, and batch-norm running
//! statistics, so save -> load reproduces evaluation outputs bit-exactly on
//! any machine.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::trainer::Trainer;
use super::{EpochStats, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::{Discriminator, Generator, MaskLayer};

const MAGIC: &[u8; 8] = b"SPICKPT\0";
const VERSION: u32 = 1;

/// A full training snapshot: parameters, optimizer state, and history.
#[derive(Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub epoch: usize,
    pub history: Vec<EpochStats>,
    pub mask: MaskLayer,
    pub gen: Generator,
    pub disc: Discriminator,
    /// Adam step counters: mask, generator, discriminator.
    pub adam_t: [u64; 3],
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer) -> Self {
        Self {
            config: trainer.cfg.clone(),
            epoch: trainer.epoch,
            history: trainer.history.clone(),
            mask: trainer.mask.clone(),
            gen: trainer.gen.clone(),
            disc: trainer.disc.clone(),
            adam_t: [trainer.opt_mask.t, trainer.opt_gen.t, trainer.opt_disc.t],
        }
    }

    fn state_arrays(&mut self) -> Vec<(String, ndarray::ArrayViewMutD<'_, f64>)> {
        let mut arrays = self.mask.omega.state_views("mask.omega");
        arrays.extend(self.gen.state_arrays());
        arrays.extend(self.disc.state_arrays());
        arrays
    }

    pub fn save(&mut self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        let config_json = serde_json::to_vec(&self.config)?;
        out.write_all(&(config_json.len() as u64).to_le_bytes())?;
        out.write_all(&config_json)?;
        out.write_all(&(self.epoch as u64).to_le_bytes())?;
        for t in self.adam_t {
            out.write_all(&t.to_le_bytes())?;
        }
        out.write_all(&(self.history.len() as u64).to_le_bytes())?;
        for h in &self.history {
            out.write_all(&(h.epoch as u64).to_le_bytes())?;
            for v in [h.mse, h.vgg, h.adv, h.d_loss, h.val_psnr] {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        let arrays = self.state_arrays();
        out.write_all(&(arrays.len() as u64).to_le_bytes())?;
        for (name, view) in arrays {
            let name_bytes = name.as_bytes();
            out.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
            out.write_all(name_bytes)?;
            out.write_all(&[view.ndim() as u8])?;
            for &d in view.shape() {
                out.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in view.iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut input = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("{}: not a checkpoint file", path.display())));
        }
        let version = read_u32(&mut input)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let config_len = read_u64(&mut input)? as usize;
        let mut config_json = vec![0u8; config_len];
        input.read_exact(&mut config_json)?;
        let config: TrainConfig = serde_json::from_slice(&config_json)?;
        config.validate()?;
        let epoch = read_u64(&mut input)? as usize;
        let adam_t = [read_u64(&mut input)?, read_u64(&mut input)?, read_u64(&mut input)?];
        let history_len = read_u64(&mut input)? as usize;
        let mut history = Vec::with_capacity(history_len);
        for _ in 0..history_len {
            let epoch = read_u64(&mut input)? as usize;
            let mut vals = [0.0f64; 5];
            for v in &mut vals {
                *v = read_f64(&mut input)?;
            }
            history.push(EpochStats {
                epoch,
                mse: vals[0],
                vgg: vals[1],
                adv: vals[2],
                d_loss: vals[3],
                val_psnr: vals[4],
            });
        }

        let (mask, gen, disc) = Trainer::build_networks(&config)?;
        let mut ckpt = Checkpoint { config, epoch, history, mask, gen, disc, adam_t };
        let array_count = read_u64(&mut input)? as usize;
        {
            let mut expected = ckpt.state_arrays();
            if array_count != expected.len() {
                return Err(Error::Format(format!(
                    "checkpoint holds {array_count} arrays, expected {}",
                    expected.len()
                )));
            }
            for (name, view) in expected.iter_mut() {
                let name_len = read_u16(&mut input)? as usize;
                let mut name_bytes = vec![0u8; name_len];
                input.read_exact(&mut name_bytes)?;
                let got_name = String::from_utf8(name_bytes)
                    .map_err(|_| Error::Format("non-UTF-8 array name".into()))?;
                if got_name != *name {
                    return Err(Error::Format(format!("array order mismatch: {got_name} vs {name}")));
                }
                let mut ndim = [0u8; 1];
                input.read_exact(&mut ndim)?;
                if ndim[0] as usize != view.ndim() {
                    return Err(Error::Format(format!("array {name}: rank mismatch")));
                }
                for &expect_dim in view.shape() {
                    let got = read_u64(&mut input)? as usize;
                    if got != expect_dim {
                        return Err(Error::Format(format!("array {name}: dim {got} != {expect_dim}")));
                    }
                }
                for v in view.iter_mut() {
                    *v = read_f64(&mut input)?;
                }
            }
        }
        Ok(ckpt)
    }
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut buf = [0u8; 2];
    r.read_exact(&mut buf)?;
    Ok(u16::from_le_bytes(buf))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_trainer() -> Trainer {
        let cfg = TrainConfig {
            sr: 0.1,
            image_size: 16,
            epochs: 1,
            batch_size: 2,
            use_gan: false,
            gen_width: 3,
            disc_width: 2,
            disc_fc_hidden: 8,
            perceptual_layer: (1, 1),
            perceptual_width: 2,
            seed: 8,
            ..TrainConfig::default()
        };
        Trainer::new(cfg).unwrap()
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let mut trainer = toy_trainer();
        let scenes = crate::train::scenes_to_batch(&crate::data::synth_shapes(4, 16, 2).unwrap()).unwrap();
        trainer.generator_step(&scenes).unwrap();
        trainer.generator_step(&scenes).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let mut ckpt = Checkpoint::from_trainer(&trainer);
        ckpt.save(&path).unwrap();
        let mut loaded = Checkpoint::load(&path).unwrap();

        assert_eq!(loaded.config, ckpt.config);
        assert_eq!(loaded.adam_t, ckpt.adam_t);
        assert_eq!(loaded.mask.omega.value, ckpt.mask.omega.value);
        assert_eq!(loaded.mask.omega.m1, ckpt.mask.omega.m1);
        // bit-exact evaluation after the round trip
        let meas = ndarray::Array2::from_elem((1, ckpt.mask.measurement_count()), 0.25);
        let a = ckpt.gen.forward(&meas, false).unwrap();
        let b = loaded.gen.forward(&meas, false).unwrap();
        assert_eq!(a, b);

        // saving the loaded checkpoint reproduces the file byte-for-byte
        let path2 = dir.path().join("ckpt2.bin");
        loaded.save(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}
