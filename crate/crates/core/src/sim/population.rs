//! The simulated vehicles: styles, keys, data and training speed.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::crypto::{IdentityRef, KeyedDigestScheme, SignatureScheme, SigningKey};
use crate::error::Result;
use crate::learning::{ComputeDelay, SyntheticTask};
use crate::model::{Dataset, StyleIndicator};

use super::config::SimConfig;

/// Independent RNG stream `stream` under `seed`, so that adding draws in one
/// component never shifts another.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) mod streams {
    pub const TASK: u64 = 1;
    pub const STYLES: u64 = 2;
    pub const ROLES: u64 = 3;
    pub const RSU: u64 = 4;
    pub const EVENTS: u64 = 5;
    pub const LEDGER: u64 = 6;
    pub const BASELINE: u64 = 7;
    pub const ICV_DATA: u64 = 1 << 20;
    pub const ICV_TRAIN: u64 = 2 << 20;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Honest,
    /// Honest but trained on label-shifted data.
    Poor,
    Attacker,
}

#[derive(Debug, Clone)]
pub struct Icv {
    pub index: u32,
    /// Index into the configured style types.
    pub style_type: usize,
    pub style: StyleIndicator,
    pub key: SigningKey,
    pub id: IdentityRef,
    pub role: Role,
    pub train: Dataset,
    /// Clean examples at the ICV's own style.
    pub test: Dataset,
    pub delay: ComputeDelay,
}

#[derive(Debug, Clone)]
pub struct Population {
    pub task: SyntheticTask,
    pub icvs: Vec<Icv>,
}

impl Population {
    /// Builds every ICV with role `Honest`. Styles are drawn uniformly inside
    /// each type's range; data depends only on the seed and the ICV index.
    pub fn build(cfg: &SimConfig) -> Result<Self> {
        let task = SyntheticTask::generate(
            &mut stream_rng(cfg.seed, streams::TASK),
            cfg.task.feature_dim,
            cfg.task.noise,
            cfg.task.style_strength,
        )?;
        let p = &cfg.population;
        let mut style_rng = stream_rng(cfg.seed, streams::STYLES);
        let mut icvs = Vec::with_capacity(p.num_icvs());
        for (t, ty) in p.style_types.iter().enumerate() {
            for _ in 0..ty.count {
                let index = icvs.len() as u32;
                let style = StyleIndicator::new(if ty.range[0] < ty.range[1] {
                    style_rng.random_range(ty.range[0]..=ty.range[1])
                } else {
                    ty.range[0]
                })?;
                let mean = if p.delay_mean_range[0] < p.delay_mean_range[1] {
                    style_rng.random_range(p.delay_mean_range[0]..=p.delay_mean_range[1])
                } else {
                    p.delay_mean_range[0]
                };
                let mut data_rng = stream_rng(cfg.seed, streams::ICV_DATA + index as u64);
                let train = task.gen_dataset(&mut data_rng, p.dataset_size, style);
                let test = task.gen_dataset(&mut data_rng, p.test_size, style);
                let key = SigningKey::derive(cfg.seed, "icv", index as u64);
                icvs.push(Icv {
                    index,
                    style_type: t,
                    style,
                    id: KeyedDigestScheme::new().fingerprint(&key),
                    key,
                    role: Role::Honest,
                    train,
                    test,
                    delay: ComputeDelay { mean, jitter: p.delay_jitter },
                });
            }
        }
        Ok(Population { task, icvs })
    }

    /// Marks `round(fraction * n)` ICVs, chosen by `stream`, with `role`.
    /// Only ICVs still `Honest` are eligible.
    pub fn assign_role(&mut self, seed: u64, stream: u64, fraction: f64, role: Role) -> Vec<u32> {
        let eligible: Vec<usize> = (0..self.icvs.len()).filter(|&i| self.icvs[i].role == Role::Honest).collect();
        let k = ((fraction * self.icvs.len() as f64).round() as usize).min(eligible.len());
        let mut rng = stream_rng(seed, streams::ROLES ^ (stream << 8));
        let mut chosen: Vec<u32> = sample(&mut rng, eligible.len(), k).into_iter().map(|j| eligible[j] as u32).collect();
        chosen.sort_unstable();
        for &i in &chosen {
            self.icvs[i as usize].role = role;
        }
        chosen
    }

    /// Shifts the training labels of every poor ICV.
    pub fn corrupt_poor(&mut self, label_bias: f64) {
        for icv in self.icvs.iter_mut().filter(|i| i.role == Role::Poor) {
            icv.train.shift_labels(label_bias);
        }
    }

    /// Signature registry holding every ICV key plus `extra` keys.
    pub fn registry<'a>(&self, extra: impl IntoIterator<Item = &'a SigningKey>) -> KeyedDigestScheme {
        let mut reg = KeyedDigestScheme::new();
        for icv in &self.icvs {
            reg.register(&icv.key);
        }
        for k in extra {
            reg.register(k);
        }
        reg
    }

    /// Clean examples at every ICV's style whose role passes `include`.
    pub fn eval_set<R: Rng + ?Sized>(&self, rng: &mut R, per_icv: usize, include: impl Fn(&Icv) -> bool) -> Result<Dataset> {
        let parts: Vec<Dataset> = self
            .icvs
            .iter()
            .filter(|i| include(i))
            .map(|i| self.task.gen_dataset(rng, per_icv, i.style))
            .collect();
        Dataset::concat(&parts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        let mut cfg = SimConfig::default();
        cfg.population.dataset_size = 20;
        cfg.population.test_size = 10;
        cfg
    }

    #[test]
    fn styles_fall_in_type_ranges() {
        let cfg = small();
        let pop = Population::build(&cfg).unwrap();
        assert_eq!(pop.icvs.len(), 35);
        for icv in &pop.icvs {
            let r = cfg.population.style_types[icv.style_type].range;
            assert!(icv.style.value() >= r[0] && icv.style.value() <= r[1]);
            assert!(icv.train.len() == 20 && icv.test.len() == 10);
        }
    }

    #[test]
    fn build_is_deterministic() {
        let a = Population::build(&small()).unwrap();
        let b = Population::build(&small()).unwrap();
        for (x, y) in a.icvs.iter().zip(&b.icvs) {
            assert_eq!(x.style, y.style);
            assert_eq!(x.train.labels(), y.train.labels());
            assert_eq!(x.id, y.id);
        }
    }

    #[test]
    fn roles_are_disjoint_and_sized() {
        let cfg = small();
        let mut pop = Population::build(&cfg).unwrap();
        let poor = pop.assign_role(cfg.seed, 1, 0.3, Role::Poor);
        let bad = pop.assign_role(cfg.seed, 2, 0.2, Role::Attacker);
        assert_eq!(poor.len(), 11);
        assert_eq!(bad.len(), 7);
        assert!(poor.iter().all(|p| !bad.contains(p)));
    }
}
