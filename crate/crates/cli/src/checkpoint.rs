//! `params.bin`: every parameter of a game as little-endian binary.
//!
//! Layout: the magic `RATLABP1`, a `u32` entry count, then per entry a `u32`
//! name length, the UTF-8 name, a `u32` rank, `u64` dims and `f64` values.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use ratlab_core::rationalization::Game;
use ratlab_core::tensor::{ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"RATLABP1";

pub fn encode(game: &Game) -> Vec<u8> {
    let stores = [&game.extractor_params, &game.predictor_params];
    let count: usize = stores.iter().map(|s| s.len()).sum();
    let mut out = MAGIC.to_vec();
    out.extend((count as u32).to_le_bytes());
    for (name, t) in stores.iter().flat_map(|s| s.iter()) {
        out.extend((name.len() as u32).to_le_bytes());
        out.extend(name.as_bytes());
        out.extend((t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend((d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        ensure!(self.bytes.len() >= n, "truncated parameter file");
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into()?) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        Ok(usize::try_from(u64::from_le_bytes(self.take(8)?.try_into()?))?)
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes };
    ensure!(r.take(MAGIC.len())? == MAGIC, "not a parameter file");
    let count = r.u32()?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()?;
        let name = String::from_utf8(r.take(len)?.to_vec()).context("parameter name is not UTF-8")?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).context("shape overflows")?;
        ensure!(numel <= r.bytes.len() / 8, "truncated parameter file");
        let data = r
            .take(numel * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    ensure!(r.bytes.is_empty(), "trailing bytes after {count} parameters");
    Ok(out)
}

fn split_into(store: &mut ParamStore, entries: &mut Vec<(String, Tensor)>, prefix: &str) -> Result<()> {
    let (mine, rest): (Vec<_>, Vec<_>) = entries.drain(..).partition(|(n, _)| n.starts_with(prefix));
    *entries = rest;
    store.load_values(mine)?;
    Ok(())
}

/// Overwrites every parameter of `game` with the values in `bytes`.
pub fn restore(game: &mut Game, bytes: &[u8]) -> Result<()> {
    let mut entries = decode(bytes)?;
    split_into(&mut game.extractor_params, &mut entries, "extractor.")?;
    split_into(&mut game.predictor_params, &mut entries, "predictor.")?;
    if let Some((name, _)) = entries.first() {
        bail!("unexpected parameter `{name}`");
    }
    Ok(())
}

pub fn save(game: &Game, path: &Path) -> Result<()> {
    std::fs::write(path, encode(game)).with_context(|| format!("writing {}", path.display()))
}

pub fn load(game: &mut Game, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    restore(game, &bytes).with_context(|| format!("loading {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ratlab_core::rationalization::{GameConfig, Modality};

    fn game(seed: u64) -> Game {
        let cfg = GameConfig {
            embedding_dim: 3,
            hidden_dim: 2,
            seed,
            ..GameConfig::default()
        };
        Game::new(cfg, Modality::Text { vocab_size: 7 }).unwrap()
    }

    #[test]
    fn round_trip_restores_every_value() {
        let a = game(1);
        let mut b = game(2);
        assert_ne!(a.predictor_params, b.predictor_params);
        restore(&mut b, &encode(&a)).unwrap();
        for (x, y) in [(&a.extractor_params, &b.extractor_params), (&a.predictor_params, &b.predictor_params)] {
            for ((n1, t1), (n2, t2)) in x.iter().zip(y.iter()) {
                assert_eq!(n1, n2);
                assert_eq!(t1.shape(), t2.shape());
                assert_eq!(t1.data(), t2.data());
            }
        }
        assert_eq!(encode(&a), encode(&b));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = encode(&game(1));
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode(b"NOTPARAM").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        // A different architecture does not fit.
        let other = Game::new(GameConfig::default(), Modality::Text { vocab_size: 7 }).unwrap();
        assert!(restore(&mut game(1), &encode(&other)).is_err());
    }
}
