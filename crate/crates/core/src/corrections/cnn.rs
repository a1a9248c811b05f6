//! Directional convolutional closure.
//!
//! Two 1D convolutions run along every grid line in i and in j with one
//! shared weight set; the two line outputs are summed per cell and passed
//! through a pointwise perceptron. Inputs are the conservative variables and
//! the cell volume, read from ghost cells too; lines never touch corner
//! ghost cells.

use std::io::{BufRead, Write};

use rand::Rng;

use crate::ad::{silu, softplus, Scalar};
use crate::error::{Error, Result};
use crate::plants::{Plant, PlantKind};
use crate::util::{fmt17, seeded};

#[derive(Clone, Debug, PartialEq)]
pub struct DirectionalCnn {
    pub channels_in: usize,
    pub width: usize,
    pub k1: usize,
    pub k2: usize,
    pub hidden: [usize; 2],
    /// Softplus on the output (eddy-viscosity mode).
    pub gate: bool,
    /// Multiplies the (gated) output.
    pub output_scale: f64,
    pub seed: u64,
    pub feature_ref: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub volume_ref: f64,
}

/// Offsets of each block inside the flat parameter vector.
#[derive(Clone, Copy, Debug)]
struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    w4: usize,
    b4: usize,
    w5: usize,
    b5: usize,
    end: usize,
}

impl DirectionalCnn {
    /// Default widths (8 conv channels, hidden 16 and 16) with features
    /// scaled by the freestream of `plant`.
    pub fn new(plant: &Plant, k1: usize, k2: usize, gate: bool, seed: u64) -> Result<Self> {
        if k1 % 2 == 0 || k2 % 2 == 0 {
            return Err(Error::Config(format!("kernel sizes must be odd, got {k1} and {k2}")));
        }
        let m = plant.m();
        let (feature_ref, feature_scale) = match plant.kind {
            PlantKind::Scalar => (vec![0.0], vec![1.0]),
            _ => {
                let fs = plant.config.freestream(m);
                let mut scale: Vec<f64> = fs.iter().map(|x| x.abs().max(1.0)).collect();
                if m == 5 {
                    scale[4] = fs[4].abs().max(1e-12);
                }
                (fs, scale)
            }
        };
        let vols = plant.cell_volumes();
        let volume_ref = vols.iter().sum::<f64>() / vols.len() as f64;
        Ok(DirectionalCnn {
            channels_in: m + 1,
            width: 8,
            k1,
            k2,
            hidden: [16, 16],
            gate,
            output_scale: 1.0,
            seed,
            feature_ref,
            feature_scale,
            volume_ref,
        })
    }

    pub fn receptive_radius(&self) -> usize {
        (self.k1 - 1) / 2 + (self.k2 - 1) / 2
    }

    fn offsets(&self) -> Offsets {
        let (c, w, [h0, h1]) = (self.channels_in, self.width, self.hidden);
        let w1 = 0;
        let b1 = w1 + w * c * self.k1;
        let w2 = b1 + w;
        let b2 = w2 + w * w * self.k2;
        let w3 = b2 + w;
        let b3 = w3 + h0 * w;
        let w4 = b3 + h0;
        let b4 = w4 + h1 * h0;
        let w5 = b4 + h1;
        let b5 = w5 + h1;
        Offsets {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            w4,
            b4,
            w5,
            b5,
            end: b5 + 1,
        }
    }

    pub fn n_params(&self) -> usize {
        self.offsets().end
    }

    /// Weights uniform in `+-1/sqrt(fan_in)`, biases zero.
    pub fn init_params(&self) -> Vec<f64> {
        let o = self.offsets();
        let mut rng = seeded(self.seed);
        let mut th = vec![0.0; o.end];
        let (c, w, [h0, h1]) = (self.channels_in, self.width, self.hidden);
        let blocks = [
            (o.w1, o.b1, c * self.k1),
            (o.w2, o.b2, w * self.k2),
            (o.w3, o.b3, w),
            (o.w4, o.b4, h0),
            (o.w5, o.b5, h1),
        ];
        for (start, stop, fan_in) in blocks {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for x in &mut th[start..stop] {
                *x = rng.random_range(-bound..bound);
            }
        }
        th
    }

    /// Normalized input features of one extended cell.
    fn features<S: Scalar>(&self, plant: &Plant, w: &[S], cell: usize, out: &mut Vec<S>) {
        let m = plant.m();
        for v in 0..m {
            out.push((w[cell * m + v] - self.feature_ref[v]) * (1.0 / self.feature_scale[v]));
        }
        let (a, b) = plant.layout.coords(cell);
        out.push(S::cst((plant.geom.volume(a, b) - self.volume_ref) / self.volume_ref));
    }

    /// Both convolutions over one line of `n + 2r` input cells, giving `n`
    /// outputs of `width` channels each.
    fn line<S: Scalar>(&self, th: &[S], o: &Offsets, x: &[Vec<S>]) -> Vec<Vec<S>> {
        let (c, wd) = (self.channels_in, self.width);
        let (r1, r2) = ((self.k1 - 1) / 2, (self.k2 - 1) / 2);
        let n1 = x.len() - 2 * r1;
        let mut win = Vec::with_capacity(c.max(wd) * self.k1.max(self.k2));
        let mut h1 = Vec::with_capacity(n1);
        for t in 0..n1 {
            win.clear();
            for ch in 0..c {
                for k in 0..self.k1 {
                    win.push(x[t + k][ch]);
                }
            }
            let row: Vec<S> = (0..wd)
                .map(|q| {
                    let wq = &th[o.w1 + q * c * self.k1..o.w1 + (q + 1) * c * self.k1];
                    silu(S::dot(wq, &win) + th[o.b1 + q])
                })
                .collect();
            h1.push(row);
        }
        let n2 = n1 - 2 * r2;
        let mut h2 = Vec::with_capacity(n2);
        for t in 0..n2 {
            win.clear();
            for ch in 0..wd {
                for k in 0..self.k2 {
                    win.push(h1[t + k][ch]);
                }
            }
            let row: Vec<S> = (0..wd)
                .map(|q| {
                    let wq = &th[o.w2 + q * wd * self.k2..o.w2 + (q + 1) * wd * self.k2];
                    S::dot(wq, &win) + th[o.b2 + q]
                })
                .collect();
            h2.push(row);
        }
        h2
    }

    /// `alpha` per interior cell, index `i*nj + j`.
    pub fn forward<S: Scalar>(&self, plant: &Plant, theta: &[S], w: &[S]) -> Vec<S> {
        let o = self.offsets();
        let l = &plant.layout;
        let (g, ni, nj) = (l.g, l.ni, l.nj);
        let r = self.receptive_radius();
        assert!(r <= g, "receptive radius exceeds ghost depth");
        let feat = |a: usize, b: usize| {
            let mut f = Vec::with_capacity(self.channels_in);
            self.features(plant, w, l.cell(a, b), &mut f);
            f
        };
        let mut hsum = vec![Vec::new(); ni * nj];
        for j in 0..nj {
            let xs: Vec<Vec<S>> = (g - r..g + ni + r).map(|a| feat(a, g + j)).collect();
            for (i, h) in self.line(theta, &o, &xs).into_iter().enumerate() {
                hsum[i * nj + j] = h;
            }
        }
        for i in 0..ni {
            let xs: Vec<Vec<S>> = (g - r..g + nj + r).map(|b| feat(g + i, b)).collect();
            for (j, h) in self.line(theta, &o, &xs).into_iter().enumerate() {
                for (acc, v) in hsum[i * nj + j].iter_mut().zip(h) {
                    *acc += v;
                }
            }
        }
        let [h0, h1] = self.hidden;
        let wd = self.width;
        hsum.into_iter()
            .map(|h| {
                let z1: Vec<S> = (0..h0)
                    .map(|q| silu(S::dot(&theta[o.w3 + q * wd..o.w3 + (q + 1) * wd], &h) + theta[o.b3 + q]))
                    .collect();
                let z2: Vec<S> = (0..h1)
                    .map(|q| silu(S::dot(&theta[o.w4 + q * h0..o.w4 + (q + 1) * h0], &z1) + theta[o.b4 + q]))
                    .collect();
                let out = S::dot(&theta[o.w5..o.w5 + h1], &z2) + theta[o.b5];
                let out = if self.gate { softplus(out) } else { out };
                out * self.output_scale
            })
            .collect()
    }

    /// Text checkpoint: a header with shapes, scales and seed, then one
    /// parameter per line with 17 significant digits.
    pub fn write_checkpoint(&self, theta: &[f64], mut out: impl Write) -> Result<()> {
        writeln!(out, "directional_cnn")?;
        writeln!(
            out,
            "channels_in {} width {} k1 {} k2 {} hidden {} {} gate {} seed {}",
            self.channels_in, self.width, self.k1, self.k2, self.hidden[0], self.hidden[1], self.gate, self.seed
        )?;
        let join = |v: &[f64]| v.iter().map(|x| fmt17(*x)).collect::<Vec<_>>().join(" ");
        writeln!(out, "output_scale {}", fmt17(self.output_scale))?;
        writeln!(out, "volume_ref {}", fmt17(self.volume_ref))?;
        writeln!(out, "feature_ref {}", join(&self.feature_ref))?;
        writeln!(out, "feature_scale {}", join(&self.feature_scale))?;
        writeln!(out, "params {}", theta.len())?;
        for x in theta {
            writeln!(out, "{}", fmt17(*x))?;
        }
        Ok(())
    }

    pub fn read_checkpoint(input: impl BufRead) -> Result<(Self, Vec<f64>)> {
        let mut lines = input.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Parse("truncated checkpoint".into()))?
                .map_err(Error::from)
        };
        if next()?.trim() != "directional_cnn" {
            return Err(Error::Parse("not a network checkpoint".into()));
        }
        let shape = next()?;
        let tok: Vec<&str> = shape.split_whitespace().collect();
        let field = |key: &str| -> Result<&str> {
            let k = tok
                .iter()
                .position(|t| *t == key)
                .ok_or_else(|| Error::Parse(format!("checkpoint header lacks {key}")))?;
            tok.get(k + 1).copied().ok_or_else(|| Error::Parse(format!("no value for {key}")))
        };
        let num = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("{s}: {e}")));
        let hk = tok
            .iter()
            .position(|t| *t == "hidden")
            .ok_or_else(|| Error::Parse("checkpoint header lacks hidden".into()))?;
        let hidden = [
            num(tok.get(hk + 1).copied().unwrap_or(""))?,
            num(tok.get(hk + 2).copied().unwrap_or(""))?,
        ];
        let channels_in = num(field("channels_in")?)?;
        let width = num(field("width")?)?;
        let k1 = num(field("k1")?)?;
        let k2 = num(field("k2")?)?;
        let gate = field("gate")?
            .parse::<bool>()
            .map_err(|e| Error::Parse(e.to_string()))?;
        let seed = field("seed")?
            .parse::<u64>()
            .map_err(|e| Error::Parse(e.to_string()))?;
        let float = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s}: {e}")));
        let keyed = |line: String, key: &str| -> Result<Vec<f64>> {
            let mut it = line.split_whitespace();
            if it.next() != Some(key) {
                return Err(Error::Parse(format!("expected {key}")));
            }
            it.map(float).collect()
        };
        let output_scale = keyed(next()?, "output_scale")?.first().copied().unwrap_or(1.0);
        let volume_ref = keyed(next()?, "volume_ref")?.first().copied().unwrap_or(1.0);
        let feature_ref = keyed(next()?, "feature_ref")?;
        let feature_scale = keyed(next()?, "feature_scale")?;
        let n = keyed(next()?, "params")?.first().copied().unwrap_or(0.0) as usize;
        let mut theta = Vec::with_capacity(n);
        for _ in 0..n {
            theta.push(float(next()?.trim())?);
        }
        let net = DirectionalCnn {
            channels_in,
            width,
            k1,
            k2,
            hidden,
            gate,
            output_scale,
            seed,
            feature_ref,
            feature_scale,
            volume_ref,
        };
        if net.n_params() != theta.len() {
            return Err(Error::LengthMismatch {
                expected: net.n_params(),
                got: theta.len(),
            });
        }
        Ok((net, theta))
    }
}
