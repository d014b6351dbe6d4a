//! GVMC checkpoints: a UTF-8 manifest (run kind, progress counters and a
//! full config echo) followed by GVMT blocks holding every parameter and
//! its Adam moments. A checkpoint is self-describing: the embedded
//! config rebuilds the exact model, and restoring mid-run continues
//! bit-identically.

use crate::gvmt;
use crate::runconfig::RunConfig;
use crate::{CliError, Result};
use gvm_core::eval::EvalModel;
use gvm_core::model::Generator;
use gvm_core::optim::{Adam, AdamConfig};
use gvm_core::params::Params;
use gvm_core::Tensor;
use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"GVMC";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Generator,
    Eval,
}

impl Kind {
    fn as_str(self) -> &'static str {
        match self {
            Kind::Generator => "generator",
            Kind::Eval => "eval",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "generator" => Ok(Kind::Generator),
            "eval" => Ok(Kind::Eval),
            other => Err(CliError::check(format!("unknown checkpoint kind '{other}'"))),
        }
    }
}

pub struct Checkpoint {
    pub kind: Kind,
    pub seed: u64,
    pub step: usize,
    pub adam_t: u64,
    pub final_loss: f64,
    pub final_metric: f64,
    pub config: RunConfig,
    /// (name, value, adam_m, adam_v) per parameter, in manifest order.
    pub entries: Vec<(String, Tensor, Tensor, Tensor)>,
}

#[allow(clippy::too_many_arguments)]
pub fn save(
    path: &Path,
    kind: Kind,
    cfg: &RunConfig,
    params: &Params,
    adam: &Adam,
    step: usize,
    final_loss: f64,
    final_metric: f64,
) -> Result<()> {
    let mut manifest = String::new();
    manifest.push_str("gvm checkpoint\n");
    manifest.push_str(&format!("kind = {}\n", kind.as_str()));
    manifest.push_str(&format!("seed = {}\n", params.seed()));
    manifest.push_str(&format!("step = {step}\n"));
    manifest.push_str(&format!("adam_t = {}\n", adam.step_count()));
    manifest.push_str(&format!("final_loss = {final_loss}\n"));
    manifest.push_str(&format!("final_metric = {final_metric}\n"));
    manifest.push_str("[config]\n");
    manifest.push_str(&cfg.to_text());
    manifest.push_str("[params]\n");
    let ids = params.ids_by_name();
    for &id in &ids {
        manifest.push_str(params.name(id));
        manifest.push('\n');
    }

    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&MAGIC)?;
    f.write_all(&VERSION.to_le_bytes())?;
    f.write_all(&(manifest.len() as u64).to_le_bytes())?;
    f.write_all(manifest.as_bytes())?;
    for &id in &ids {
        let (rows, cols) = params.shape(id);
        let value = Tensor::matrix(rows, cols, params.data(id).to_vec()).map_err(CliError::Core)?;
        gvmt::write_f64(&mut f, &value)?;
        let (m, v) = adam.moments(id);
        gvmt::write_f64(&mut f, &Tensor::matrix(rows, cols, m.to_vec()).map_err(CliError::Core)?)?;
        gvmt::write_f64(&mut f, &Tensor::matrix(rows, cols, v.to_vec()).map_err(CliError::Core)?)?;
    }
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut pos: u64 = 0;
    let magic = take::<4>(&mut f, &mut pos)?;
    if magic != MAGIC {
        return Err(CliError::Format {
            offset: 0,
            message: format!("bad magic {magic:02X?}, expected {MAGIC:02X?}"),
        });
    }
    let version = u32::from_le_bytes(take::<4>(&mut f, &mut pos)?);
    if version != VERSION {
        return Err(CliError::Format { offset: 4, message: format!("unsupported version {version}") });
    }
    let manifest_len = u64::from_le_bytes(take::<8>(&mut f, &mut pos)?) as usize;
    let mut manifest = vec![0u8; manifest_len];
    f.read_exact(&mut manifest).map_err(|_| CliError::Format {
        offset: pos,
        message: "truncated manifest".into(),
    })?;
    pos += manifest_len as u64;
    let manifest = String::from_utf8(manifest).map_err(|_| CliError::Format {
        offset: 16,
        message: "manifest is not UTF-8".into(),
    })?;

    let mut kind = None;
    let mut seed = None;
    let mut step = None;
    let mut adam_t = None;
    let mut final_loss = f64::NAN;
    let mut final_metric = f64::NAN;
    let mut config_text = String::new();
    let mut names: Vec<String> = Vec::new();
    let mut section = "";
    for line in manifest.lines() {
        match line {
            "gvm checkpoint" => continue,
            "[config]" => {
                section = "config";
                continue;
            }
            "[params]" => {
                section = "params";
                continue;
            }
            _ => {}
        }
        match section {
            "config" => {
                config_text.push_str(line);
                config_text.push('\n');
            }
            "params" => {
                if !line.is_empty() {
                    names.push(line.to_string());
                }
            }
            _ => {
                let Some((k, v)) = line.split_once('=') else { continue };
                let (k, v) = (k.trim(), v.trim());
                match k {
                    "kind" => kind = Some(Kind::parse(v)?),
                    "seed" => seed = v.parse::<u64>().ok(),
                    "step" => step = v.parse::<usize>().ok(),
                    "adam_t" => adam_t = v.parse::<u64>().ok(),
                    "final_loss" => final_loss = v.parse::<f64>().unwrap_or(f64::NAN),
                    "final_metric" => final_metric = v.parse::<f64>().unwrap_or(f64::NAN),
                    _ => {}
                }
            }
        }
    }
    let kind = kind.ok_or_else(|| CliError::check("checkpoint manifest missing kind"))?;
    let seed = seed.ok_or_else(|| CliError::check("checkpoint manifest missing seed"))?;
    let step = step.ok_or_else(|| CliError::check("checkpoint manifest missing step"))?;
    let adam_t = adam_t.ok_or_else(|| CliError::check("checkpoint manifest missing adam_t"))?;
    let config = RunConfig::from_text(&config_text)?;

    let mut entries = Vec::with_capacity(names.len());
    for name in names {
        let (value, next) = gvmt::read_block(&mut f, pos)?;
        let value = value.expect_float("checkpoint value")?;
        let (m, next2) = gvmt::read_block(&mut f, next)?;
        let m = m.expect_float("checkpoint adam m")?;
        let (v, next3) = gvmt::read_block(&mut f, next2)?;
        let v = v.expect_float("checkpoint adam v")?;
        pos = next3;
        entries.push((name, value, m, v));
    }
    Ok(Checkpoint { kind, seed, step, adam_t, final_loss, final_metric, config, entries })
}

/// Restore parameters and optimizer state into a freshly built model's
/// stores. The checkpoint must name exactly the model's parameters with
/// matching shapes.
pub fn restore_into(ck: &Checkpoint, params: &mut Params, adam: &mut Adam) -> Result<()> {
    let model_names: BTreeSet<&str> = params.iter().map(|(_, e)| e.name.as_str()).collect();
    let ck_names: BTreeSet<&str> = ck.entries.iter().map(|(n, _, _, _)| n.as_str()).collect();
    if model_names != ck_names {
        let missing: Vec<&&str> = model_names.difference(&ck_names).collect();
        let extra: Vec<&&str> = ck_names.difference(&model_names).collect();
        return Err(CliError::check(format!(
            "checkpoint does not match the model: missing {missing:?}, unexpected {extra:?}"
        )));
    }
    for (name, value, m, v) in &ck.entries {
        params.load(name, value.data()).map_err(CliError::Core)?;
        let id = params.id_of(name).map_err(CliError::Core)?;
        adam.restore(id, m.data(), v.data()).map_err(CliError::Core)?;
    }
    adam.set_step_count(ck.adam_t);
    Ok(())
}

/// Rebuild a generator (model, params, optimizer) from a checkpoint.
pub fn load_generator(path: &Path) -> Result<(Checkpoint, Generator, Params, Adam)> {
    let ck = load(path)?;
    if ck.kind != Kind::Generator {
        return Err(CliError::check(format!(
            "expected a generator checkpoint, found kind '{}'",
            ck.kind.as_str()
        )));
    }
    let mut params = Params::new(ck.seed);
    let gen = Generator::new(&mut params, &ck.config.gen)?;
    let mut adam = Adam::new(adam_config(&ck.config), &params);
    restore_into(&ck, &mut params, &mut adam)?;
    Ok((ck, gen, params, adam))
}

/// Rebuild the correspondence scorer from a checkpoint.
pub fn load_eval(path: &Path) -> Result<(Checkpoint, EvalModel, Params, Adam)> {
    let ck = load(path)?;
    if ck.kind != Kind::Eval {
        return Err(CliError::check(format!(
            "expected an eval checkpoint, found kind '{}'",
            ck.kind.as_str()
        )));
    }
    let mut params = Params::new(ck.seed);
    let model = EvalModel::new(&mut params, &ck.config.eval_config())?;
    let mut adam = Adam::new(adam_config(&ck.config), &params);
    restore_into(&ck, &mut params, &mut adam)?;
    Ok((ck, model, params, adam))
}

pub fn adam_config(cfg: &RunConfig) -> AdamConfig {
    AdamConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..AdamConfig::default() }
}

fn take<const N: usize>(r: &mut impl Read, pos: &mut u64) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|_| CliError::Format {
        offset: *pos,
        message: "truncated checkpoint header".into(),
    })?;
    *pos += N as u64;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use gvm_core::config::GenConfig;

    #[test]
    fn generator_checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.gvmc");

        let cfg = RunConfig { gen: GenConfig::gradcheck_scale(), ..RunConfig::default() };
        let mut params = Params::new(5);
        let _gen = Generator::new(&mut params, &cfg.gen).unwrap();
        let adam = Adam::new(adam_config(&cfg), &params);

        save(&path, Kind::Generator, &cfg, &params, &adam, 17, 0.25, 0.5).unwrap();
        let (ck, _gen2, params2, adam2) = load_generator(&path).unwrap();
        assert_eq!(ck.step, 17);
        assert_eq!(ck.final_loss, 0.25);
        assert_eq!(ck.config, cfg);
        assert_eq!(adam2.step_count(), adam.step_count());
        for (id, e) in params.iter() {
            let id2 = params2.id_of(&e.name).unwrap();
            assert_eq!(params.data(id), params2.data(id2), "{}", e.name);
        }
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.gvmc");
        let cfg = RunConfig { gen: GenConfig::gradcheck_scale(), ..RunConfig::default() };
        let mut params = Params::new(5);
        let _gen = Generator::new(&mut params, &cfg.gen).unwrap();
        let adam = Adam::new(adam_config(&cfg), &params);
        save(&path, Kind::Generator, &cfg, &params, &adam, 0, f64::NAN, f64::NAN).unwrap();
        assert!(load_eval(&path).is_err());
    }

    #[test]
    fn mismatched_architecture_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.gvmc");
        let cfg = RunConfig { gen: GenConfig::gradcheck_scale(), ..RunConfig::default() };
        let mut params = Params::new(5);
        let _gen = Generator::new(&mut params, &cfg.gen).unwrap();
        let adam = Adam::new(adam_config(&cfg), &params);
        save(&path, Kind::Generator, &cfg, &params, &adam, 0, 0.0, 0.0).unwrap();

        // Pretend the checkpoint was for a different geometry.
        let ck = load(&path).unwrap();
        let mut other = ck.config.clone();
        other.gen.dec_blocks = 2;
        let mut params2 = Params::new(ck.seed);
        let _gen2 = Generator::new(&mut params2, &other.gen).unwrap();
        let mut adam2 = Adam::new(adam_config(&other), &params2);
        let err = restore_into(&ck, &mut params2, &mut adam2).unwrap_err();
        assert!(err.to_string().contains("does not match"));
    }
}
