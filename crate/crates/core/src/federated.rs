//! Multi-client estimators: distributed GD, QGD, MARINA and EF21.
//!
//! Every client holds its own estimate `G_l`; the server uses their mean.
//! Initial estimates are exact local gradients and are not counted as
//! communication.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::compression::Compressor;
use crate::error::{Error, Result};
use crate::linalg::{frob_sq, ParamMatrix};
use crate::problems::Problem;
use crate::rng::RunStreams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "kebab-case")]
pub enum FederatedKind {
    DistributedGd,
    Qgd,
    /// Full synchronization with probability `q` in (0, 1].
    Marina {
        q: f64,
    },
    Ef21,
}

impl FederatedKind {
    pub fn name(&self) -> &'static str {
        match self {
            FederatedKind::DistributedGd => "distributed-gd",
            FederatedKind::Qgd => "qgd",
            FederatedKind::Marina { .. } => "marina",
            FederatedKind::Ef21 => "ef21",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FederatedConfig {
    #[serde(flatten)]
    pub kind: FederatedKind,
    pub compressor: Compressor,
}

#[derive(Clone, Debug)]
pub struct FederatedEstimator {
    kind: FederatedKind,
    compressor: Compressor,
    d: usize,
    local: Vec<ParamMatrix>,
    server: ParamMatrix,
}

fn mean(parts: &[ParamMatrix]) -> ParamMatrix {
    let mut s = parts[0].clone();
    for p in &parts[1..] {
        s += p;
    }
    s / parts.len() as f64
}

impl FederatedEstimator {
    pub fn new(
        cfg: &FederatedConfig,
        clients: &[Problem],
        w0: &ParamMatrix,
        init: Option<&ParamMatrix>,
    ) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::config("clients", "need at least one client"));
        }
        let d = clients[0].dim();
        cfg.compressor.validate(d)?;
        let compressor = match cfg.kind {
            FederatedKind::Qgd | FederatedKind::Marina { .. } => {
                if cfg.compressor.omega(d).is_none() {
                    return Err(Error::config(
                        "compressor",
                        format!(
                            "{} needs an unbiased compressor, got {}",
                            cfg.kind.name(),
                            cfg.compressor
                        ),
                    ));
                }
                cfg.compressor.clone()
            }
            FederatedKind::Ef21 => cfg.compressor.as_contractive(d),
            FederatedKind::DistributedGd => Compressor::Identity,
        };
        if let FederatedKind::Marina { q } = cfg.kind {
            if !(q > 0.0 && q <= 1.0) {
                return Err(Error::config("q", format!("{q} is outside (0, 1]")));
            }
        }
        for c in clients {
            c.check_shape(w0)?;
        }
        let local: Vec<ParamMatrix> = match init {
            Some(g) => {
                clients[0].check_shape(g)?;
                vec![g.clone(); clients.len()]
            }
            None => clients.iter().map(|c| c.grad(w0)).collect(),
        };
        let server = mean(&local);
        Ok(FederatedEstimator {
            kind: cfg.kind,
            compressor,
            d,
            local,
            server,
        })
    }

    pub fn current(&self) -> &ParamMatrix {
        &self.server
    }

    pub fn local(&self) -> &[ParamMatrix] {
        &self.local
    }

    /// The compressor actually applied (EF21 may wrap an unbiased one).
    pub fn compressor(&self) -> &Compressor {
        &self.compressor
    }

    /// `(1/M) sum_l ||G_l - grad f_l(W)||^2`.
    pub fn client_gap(&self, clients: &[Problem], w: &ParamMatrix) -> f64 {
        let s: f64 = self
            .local
            .iter()
            .zip(clients)
            .map(|(g, c)| frob_sq(&(g - c.grad(w))))
            .sum();
        s / clients.len() as f64
    }

    /// Advance all clients to `w_new`; returns the scalars sent this round.
    pub fn advance(
        &mut self,
        clients: &[Problem],
        w_new: &ParamMatrix,
        w_old: &ParamMatrix,
        streams: &mut RunStreams,
    ) -> f64 {
        let d = self.d;
        let lossless = self.compressor.is_lossless(d);
        let mut sent = 0.0;
        match self.kind {
            FederatedKind::DistributedGd => {
                for (g, c) in self.local.iter_mut().zip(clients) {
                    *g = c.grad(w_new);
                    sent += d as f64;
                }
            }
            FederatedKind::Qgd => {
                for (l, (g, c)) in self.local.iter_mut().zip(clients).enumerate() {
                    *g = self.compressor.compress(&c.grad(w_new), &mut streams.compressors[l]);
                    sent += self.compressor.comm_scalars(d);
                }
            }
            FederatedKind::Marina { q } => {
                let full = streams.coin.random_bool(q);
                for (l, (g, c)) in self.local.iter_mut().zip(clients).enumerate() {
                    let fresh = c.grad(w_new);
                    if full {
                        *g = fresh;
                        sent += d as f64;
                    } else if lossless {
                        // same update, associated so that an exact state stays exact
                        let old = c.grad(w_old);
                        *g = fresh + (&*g - old);
                        sent += self.compressor.comm_scalars(d);
                    } else {
                        let diff = fresh - c.grad(w_old);
                        *g += self.compressor.compress(&diff, &mut streams.compressors[l]);
                        sent += self.compressor.comm_scalars(d);
                    }
                }
            }
            FederatedKind::Ef21 => {
                for (l, (g, c)) in self.local.iter_mut().zip(clients).enumerate() {
                    let fresh = c.grad(w_new);
                    if lossless {
                        *g = fresh;
                    } else {
                        let diff = fresh - &*g;
                        *g += self.compressor.compress(&diff, &mut streams.compressors[l]);
                    }
                    sent += self.compressor.comm_scalars(d);
                }
            }
        }
        self.server = mean(&self.local);
        sent
    }
}
