use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{Adam, InputNorm, Mappo, MappoConfig, Mlp};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"CFMAPPO\0";
const VERSION: u32 = 1;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn write_vec<W: Write, T: Scalar>(w: &mut W, v: &[T]) -> Result<()> {
    w.write_u64::<LE>(v.len() as u64)?;
    for x in v {
        w.write_f64::<LE>(x.to64())?;
    }
    Ok(())
}

fn read_vec<R: Read, T: Scalar>(r: &mut R, expect: usize) -> Result<Vec<T>> {
    let n = r.read_u64::<LE>()? as usize;
    if n != expect {
        return Err(format_err(format!("expected {expect} values, found {n}")));
    }
    (0..n).map(|_| Ok(T::of(r.read_f64::<LE>()?))).collect()
}

fn write_sizes<W: Write>(w: &mut W, s: &[usize]) -> Result<()> {
    w.write_u32::<LE>(s.len() as u32)?;
    for &x in s {
        w.write_u32::<LE>(x as u32)?;
    }
    Ok(())
}

fn read_sizes<R: Read>(r: &mut R) -> Result<Vec<usize>> {
    let n = r.read_u32::<LE>()? as usize;
    if n > 64 {
        return Err(format_err("implausible layer count"));
    }
    (0..n).map(|_| Ok(r.read_u32::<LE>()? as usize)).collect()
}

fn write_net<W: Write, T: Scalar>(w: &mut W, net: &Mlp<T>, opt: &Adam<T>) -> Result<()> {
    write_vec(w, net.params())?;
    w.write_u64::<LE>(opt.t)?;
    write_vec(w, &opt.m)?;
    write_vec(w, &opt.v)
}

fn read_net<R: Read, T: Scalar>(r: &mut R, sizes: &[usize]) -> Result<(Mlp<T>, Adam<T>)> {
    let count: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    let params = read_vec(r, count)?;
    let net = Mlp::from_params(sizes, params)?;
    let t = r.read_u64::<LE>()?;
    let m = read_vec(r, count)?;
    let v = read_vec(r, count)?;
    Ok((net, Adam { m, v, t }))
}

impl<T: Scalar> Mappo<T> {
    /// Versioned little-endian binary: header (magic, version, K, L, config,
    /// layer sizes), input normalization, then parameters and optimizer
    /// moments of every policy followed by the critic.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LE>(VERSION)?;
        w.write_u32::<LE>(self.num_users as u32)?;
        w.write_u32::<LE>(self.num_agents as u32)?;
        let cfg = serde_json::to_vec(&self.cfg)?;
        w.write_u32::<LE>(cfg.len() as u32)?;
        w.write_all(&cfg)?;
        write_sizes(w, self.policies[0].sizes())?;
        write_sizes(w, self.critic.sizes())?;
        w.write_u64::<LE>(self.iterations)?;
        write_vec(w, &self.norm.shift)?;
        write_vec(w, &self.norm.scale)?;
        for (p, o) in self.policies.iter().zip(&self.policy_opt) {
            write_net(w, p, o)?;
        }
        write_net(w, &self.critic, &self.critic_opt)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(format_err("not a MAPPO checkpoint"));
        }
        let version = r.read_u32::<LE>()?;
        if version != VERSION {
            return Err(format_err(format!("unsupported checkpoint version {version}")));
        }
        let num_users = r.read_u32::<LE>()? as usize;
        let num_agents = r.read_u32::<LE>()? as usize;
        let n = r.read_u32::<LE>()? as usize;
        let mut cfg_bytes = vec![0u8; n];
        r.read_exact(&mut cfg_bytes)?;
        let cfg: MappoConfig = serde_json::from_slice(&cfg_bytes)?;
        let p_sizes = read_sizes(r)?;
        let c_sizes = read_sizes(r)?;
        let obs_dim = 2 * num_users + 1;
        if p_sizes.first() != Some(&obs_dim)
            || p_sizes.last() != Some(&2)
            || c_sizes.first() != Some(&(obs_dim * num_agents))
            || c_sizes.last() != Some(&1)
        {
            return Err(format_err("layer sizes inconsistent with K and L"));
        }
        let iterations = r.read_u64::<LE>()?;
        let shift = read_vec(r, obs_dim)?;
        let scale = read_vec(r, obs_dim)?;
        let mut policies = Vec::with_capacity(num_agents);
        let mut policy_opt = Vec::with_capacity(num_agents);
        for _ in 0..num_agents {
            let (p, o) = read_net(r, &p_sizes)?;
            policies.push(p);
            policy_opt.push(o);
        }
        let (critic, critic_opt) = read_net(r, &c_sizes)?;
        Ok(Self {
            num_users,
            num_agents,
            cfg,
            norm: InputNorm { shift, scale },
            policies,
            critic,
            policy_opt,
            critic_opt,
            iterations,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingCheckpoint(path.display().to_string())
            } else {
                e.into()
            }
        })?;
        Self::read_from(&mut BufReader::new(f))
    }
}
