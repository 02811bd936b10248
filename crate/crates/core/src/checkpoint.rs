//! Versioned little-endian binary checkpoints.
//!
//! Layout:
//!
//! ```text
//! magic "MARLCKPT" | version u32 | algorithm u8 | n_agents u32
//! rng: seed [u8; 32] | stream u64 | word_pos u128
//! counters: 6 × u64
//! per trainer: agent_index u32 | actor | target_actor | actor_adam
//!              | n_critics u32 | per critic: net | target | adam
//! net:   n_layers u32 | head u8 | per layer: rows u32 | cols u32 | weights f64[rows·cols] | bias f64[rows]
//! adam:  step u64 | beta1 f64 | beta2 f64 | epsilon f64 | first moments | second moments
//!        (moments are layer lists with the same per-layer header as nets)
//! ```
//!
//! Every float is written as its IEEE-754 bit pattern, so a load/save cycle
//! is bit-exact.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use crate::algos::{Algorithm, CriticSlot, Learner, Trainer, UpdateCounters};
use crate::nn::{AdamState, DenseLayer, Mlp, OutputActivation};
use crate::{Error, Result, Rng};

const MAGIC: &[u8; 8] = b"MARLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub algorithm: Algorithm,
    pub trainers: Vec<Trainer>,
    pub counters: UpdateCounters,
    pub rng: Rng,
}

impl Checkpoint {
    pub fn from_learner(learner: &Learner) -> Self {
        Self {
            algorithm: learner.cfg.algorithm,
            trainers: learner.trainers.clone(),
            counters: learner.counters,
            rng: learner.rng.clone(),
        }
    }

    /// Replaces the learner's networks, optimizer states, counters and
    /// generator. Replay contents are not part of a checkpoint.
    pub fn restore_into(self, learner: &mut Learner) -> Result<()> {
        if self.algorithm != learner.cfg.algorithm || self.trainers.len() != learner.trainers.len() {
            return Err(Error::Checkpoint("checkpoint does not match this run's algorithm or agent count".into()));
        }
        for (new, old) in self.trainers.iter().zip(&learner.trainers) {
            if !new.actor.same_architecture(&old.actor)
                || new.critics.len() != old.critics.len()
                || !new.critics[0].net.same_architecture(&old.critics[0].net)
            {
                return Err(Error::Checkpoint(format!("agent {} network shapes differ", new.agent_index)));
            }
        }
        learner.trainers = self.trainers;
        learner.counters = self.counters;
        learner.rng = self.rng;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        put_u32(w, CHECKPOINT_VERSION)?;
        put_u8(w, algorithm_tag(self.algorithm))?;
        put_u32(w, self.trainers.len() as u32)?;

        w.write_all(&self.rng.get_seed())?;
        put_u64(w, self.rng.get_stream())?;
        w.write_all(&self.rng.get_word_pos().to_le_bytes())?;

        let c = &self.counters;
        for v in [
            c.cross_agent_policy_reads,
            c.buffer_lookups,
            c.critic_backprops,
            c.actor_backprops,
            c.update_rounds,
            c.env_steps,
        ] {
            put_u64(w, v)?;
        }

        for t in &self.trainers {
            put_u32(w, t.agent_index as u32)?;
            write_net(w, &t.actor)?;
            write_net(w, &t.target_actor)?;
            write_adam(w, &t.actor_opt)?;
            put_u32(w, t.critics.len() as u32)?;
            for c in &t.critics {
                write_net(w, &c.net)?;
                write_net(w, &c.target)?;
                write_adam(w, &c.opt)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = get_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let algorithm = match get_u8(r)? {
            0 => Algorithm::Maddpg,
            1 => Algorithm::Matd3,
            2 => Algorithm::Masac,
            other => return Err(Error::Checkpoint(format!("unknown algorithm tag {other}"))),
        };
        let n_agents = get_u32(r)? as usize;

        let mut seed = [0u8; 32];
        r.read_exact(&mut seed)?;
        let stream = get_u64(r)?;
        let mut pos = [0u8; 16];
        r.read_exact(&mut pos)?;
        let mut rng = <Rng as rand::SeedableRng>::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(u128::from_le_bytes(pos));

        let counters = UpdateCounters {
            cross_agent_policy_reads: get_u64(r)?,
            buffer_lookups: get_u64(r)?,
            critic_backprops: get_u64(r)?,
            actor_backprops: get_u64(r)?,
            update_rounds: get_u64(r)?,
            env_steps: get_u64(r)?,
        };

        let mut trainers = Vec::with_capacity(n_agents);
        for _ in 0..n_agents {
            let agent_index = get_u32(r)? as usize;
            let actor = read_net(r)?;
            let target_actor = read_net(r)?;
            let actor_opt = read_adam(r, &actor)?;
            let n_critics = get_u32(r)? as usize;
            if n_critics != algorithm.n_critics() {
                return Err(Error::Checkpoint(format!("{n_critics} critics for {algorithm}")));
            }
            let mut critics = Vec::with_capacity(n_critics);
            for _ in 0..n_critics {
                let net = read_net(r)?;
                let target = read_net(r)?;
                let opt = read_adam(r, &net)?;
                critics.push(CriticSlot { net, target, opt });
            }
            trainers.push(Trainer { agent_index, algorithm, actor, target_actor, actor_opt, critics });
        }
        Ok(Self { algorithm, trainers, counters, rng })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }
}

fn algorithm_tag(a: Algorithm) -> u8 {
    match a {
        Algorithm::Maddpg => 0,
        Algorithm::Matd3 => 1,
        Algorithm::Masac => 2,
    }
}

fn put_u8<W: Write>(w: &mut W, v: u8) -> Result<()> {
    Ok(w.write_all(&[v])?)
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    Ok(w.write_all(&v.to_bits().to_le_bytes())?)
}

fn get_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(get_u64(r)?))
}

fn write_layers<W: Write>(w: &mut W, layers: &[DenseLayer]) -> Result<()> {
    for layer in layers {
        put_u32(w, layer.output_dim() as u32)?;
        put_u32(w, layer.input_dim() as u32)?;
        for &v in layer.weights.iter() {
            put_f64(w, v)?;
        }
        for &v in layer.bias.iter() {
            put_f64(w, v)?;
        }
    }
    Ok(())
}

fn read_layers<R: Read>(r: &mut R, count: usize) -> Result<Vec<DenseLayer>> {
    (0..count)
        .map(|_| {
            let rows = get_u32(r)? as usize;
            let cols = get_u32(r)? as usize;
            let weights = (0..rows * cols).map(|_| get_f64(r)).collect::<Result<Vec<_>>>()?;
            let bias = (0..rows).map(|_| get_f64(r)).collect::<Result<Vec<_>>>()?;
            Ok(DenseLayer {
                weights: Array2::from_shape_vec((rows, cols), weights).map_err(|e| Error::Checkpoint(e.to_string()))?,
                bias: Array1::from(bias),
            })
        })
        .collect()
}

fn write_net<W: Write>(w: &mut W, net: &Mlp) -> Result<()> {
    put_u32(w, net.layers().len() as u32)?;
    put_u8(
        w,
        match net.output_activation() {
            OutputActivation::Identity => 0,
            OutputActivation::Tanh => 1,
        },
    )?;
    write_layers(w, net.layers())
}

fn read_net<R: Read>(r: &mut R) -> Result<Mlp> {
    let n_layers = get_u32(r)? as usize;
    let head = match get_u8(r)? {
        0 => OutputActivation::Identity,
        1 => OutputActivation::Tanh,
        other => return Err(Error::Checkpoint(format!("unknown output activation {other}"))),
    };
    Mlp::from_layers(read_layers(r, n_layers)?, head).map_err(|e| Error::Checkpoint(e.to_string()))
}

fn write_adam<W: Write>(w: &mut W, state: &AdamState) -> Result<()> {
    put_u64(w, state.step_count)?;
    put_f64(w, state.beta1)?;
    put_f64(w, state.beta2)?;
    put_f64(w, state.epsilon)?;
    write_layers(w, &state.first_moment)?;
    write_layers(w, &state.second_moment)
}

fn read_adam<R: Read>(r: &mut R, net: &Mlp) -> Result<AdamState> {
    let step_count = get_u64(r)?;
    let beta1 = get_f64(r)?;
    let beta2 = get_f64(r)?;
    let epsilon = get_f64(r)?;
    let n = net.layers().len();
    let first_moment = read_layers(r, n)?;
    let second_moment = read_layers(r, n)?;
    let shapes_ok = first_moment
        .iter()
        .chain(&second_moment)
        .zip(net.layers().iter().chain(net.layers()))
        .all(|(m, l)| m.weights.dim() == l.weights.dim());
    if !shapes_ok {
        return Err(Error::Checkpoint("optimizer moments do not match network".into()));
    }
    Ok(AdamState { first_moment, second_moment, step_count, beta1, beta2, epsilon })
}
