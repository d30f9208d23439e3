use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Objective, TrainError};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// `y = W x + b` with `W: out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Affine {
    fn zeros(out: usize, inp: usize) -> Self {
        Self {
            weight: Matrix::zeros(out, inp),
            bias: vec![0.0; out],
        }
    }

    fn random(out: usize, inp: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (inp as f64).sqrt();
        let mut a = Self::zeros(out, inp);
        for w in &mut a.weight.data {
            let z: f64 = StandardNormal.sample(rng);
            *w = z * scale;
        }
        a
    }

    /// Applies the map to every row of `x` (`n × in` → `n × out`).
    fn apply(&self, x: &Matrix) -> Matrix {
        let mut y = Matrix::zeros(x.rows, self.weight.rows);
        for r in 0..x.rows {
            let xr = x.row(r);
            for (o, out) in y.row_mut(r).iter_mut().enumerate() {
                let w = self.weight.row(o);
                *out = self.bias[o] + w.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        y
    }

    /// Accumulates `scale · (dyᵀ x, Σ dy)` into `self` as a gradient.
    fn accumulate(&mut self, dy: &Matrix, x: &Matrix, scale: f64) {
        for r in 0..dy.rows {
            let (g, xr) = (dy.row(r), x.row(r));
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                self.bias[o] += scale * go;
                for (w, &xv) in self.weight.row_mut(o).iter_mut().zip(xr) {
                    *w += scale * go * xv;
                }
            }
        }
    }

    /// `dy · W` (`n × out` → `n × in`).
    fn backprop(&self, dy: &Matrix) -> Matrix {
        let mut dx = Matrix::zeros(dy.rows, self.weight.cols);
        for r in 0..dy.rows {
            let g = dy.row(r).to_vec();
            let out = dx.row_mut(r);
            for (o, &go) in g.iter().enumerate() {
                for (d, &w) in out.iter_mut().zip(self.weight.row(o)) {
                    *d += go * w;
                }
            }
        }
        dx
    }

    fn step(&mut self, grad: &Affine, lr: f64) {
        for (w, g) in self.weight.data.iter_mut().zip(&grad.weight.data) {
            *w -= lr * g;
        }
        for (b, g) in self.bias.iter_mut().zip(&grad.bias) {
            *b -= lr * g;
        }
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weight.data.iter().chain(&self.bias)
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weight.data.iter_mut().chain(&mut self.bias)
    }
}

/// A stack of `L` width-preserving `tanh(W h + b)` blocks with an affine
/// classifier head after every block.
///
/// Head `l` reads the output of block `l`, so block `i` is shared by every
/// exit `j ≥ i`. Initial weights are drawn from `N(0, 1/fan_in)` with a
/// ChaCha8 stream seeded by `seed`; biases start at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiExitNet {
    pub width: usize,
    pub num_classes: usize,
    pub blocks: Vec<Affine>,
    pub heads: Vec<Affine>,
}

/// Gradients with the same layout as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub blocks: Vec<Affine>,
    pub heads: Vec<Affine>,
}

impl Gradients {
    fn zeros(net: &MultiExitNet) -> Self {
        Self {
            blocks: (0..net.num_layers())
                .map(|_| Affine::zeros(net.width, net.width))
                .collect(),
            heads: (0..net.num_layers())
                .map(|_| Affine::zeros(net.num_classes, net.width))
                .collect(),
        }
    }

    /// Every block gradient component, block by block.
    pub fn block_values(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .flat_map(|a| a.params().copied())
            .collect()
    }

    pub fn head_values(&self) -> Vec<f64> {
        self.heads
            .iter()
            .flat_map(|a| a.params().copied())
            .collect()
    }
}

/// Activations of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `hidden[0]` is the input, `hidden[l]` the output of block `l`.
    pub hidden: Vec<Matrix>,
    /// `logits[l - 1]` is exit `l`'s `n × C` output.
    pub logits: Vec<Matrix>,
}

impl ForwardPass {
    pub fn batch_size(&self) -> usize {
        self.hidden[0].rows
    }
}

pub fn init_network(
    num_layers: usize,
    width: usize,
    num_classes: usize,
    seed: u64,
) -> Result<MultiExitNet, TrainError> {
    for (name, v) in [
        ("num_layers", num_layers),
        ("width", width),
        ("num_classes", num_classes),
    ] {
        if v == 0 {
            return Err(TrainError::Config(format!("{name} must be at least 1")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks = (0..num_layers)
        .map(|_| Affine::random(width, width, &mut rng))
        .collect();
    let heads = (0..num_layers)
        .map(|_| Affine::random(num_classes, width, &mut rng))
        .collect();
    Ok(MultiExitNet {
        width,
        num_classes,
        blocks,
        heads,
    })
}

fn row_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl MultiExitNet {
    pub fn num_layers(&self) -> usize {
        self.blocks.len()
    }

    pub fn forward_all_exits(&self, batch: &Matrix) -> Result<ForwardPass, TrainError> {
        if batch.cols != self.width {
            return Err(TrainError::Shape(format!(
                "batch width {} != network width {}",
                batch.cols, self.width
            )));
        }
        let mut hidden = Vec::with_capacity(self.num_layers() + 1);
        let mut logits = Vec::with_capacity(self.num_layers());
        hidden.push(batch.clone());
        for (block, head) in self.blocks.iter().zip(&self.heads) {
            let mut h = block.apply(hidden.last().expect("input present"));
            h.data.iter_mut().for_each(|v| *v = v.tanh());
            logits.push(head.apply(&h));
            hidden.push(h);
        }
        Ok(ForwardPass { hidden, logits })
    }

    /// Mean cross-entropy of every exit on `labels`.
    pub fn exit_losses(
        &self,
        pass: &ForwardPass,
        labels: &[usize],
    ) -> Result<Vec<f64>, TrainError> {
        check_labels(pass, labels, self.num_classes)?;
        let n = labels.len() as f64;
        Ok(pass
            .logits
            .iter()
            .map(|z| {
                labels
                    .iter()
                    .enumerate()
                    .map(|(r, &y)| {
                        let row = z.row(r);
                        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                        lse - row[y]
                    })
                    .sum::<f64>()
                    / n
            })
            .collect())
    }

    /// Gradients of the weighted per-exit objective described by `objective`.
    ///
    /// Exit `j`'s loss enters with weight `objective.exit_weight(j)`. The
    /// gradient reaching block `i`'s parameters is multiplied by
    /// `objective.block_scale(i)`; the signal passed further down to block
    /// `i − 1` is not, so scales never compound. Frozen blocks get exact
    /// zeros.
    pub fn backward(
        &self,
        pass: &ForwardPass,
        labels: &[usize],
        objective: &Objective,
    ) -> Result<Gradients, TrainError> {
        check_labels(pass, labels, self.num_classes)?;
        if pass.hidden.len() != self.num_layers() + 1 || pass.hidden[0].cols != self.width {
            return Err(TrainError::Shape(
                "forward pass does not match network".into(),
            ));
        }
        let num_layers = self.num_layers();
        let n = labels.len();
        let mut grads = Gradients::zeros(self);
        let mut dh = Matrix::zeros(n, self.width);
        let frozen = objective.backbone_frozen();

        for l in (1..=num_layers).rev() {
            let h = &pass.hidden[l];
            let weight = objective.exit_weight(l, num_layers);
            if weight != 0.0 {
                let z = &pass.logits[l - 1];
                let mut dz = Matrix::zeros(n, self.num_classes);
                for (r, &y) in labels.iter().enumerate() {
                    let p = row_softmax(z.row(r));
                    for (c, d) in dz.row_mut(r).iter_mut().enumerate() {
                        let target = if c == y { 1.0 } else { 0.0 };
                        *d = weight * (p[c] - target) / n as f64;
                    }
                }
                grads.heads[l - 1].accumulate(&dz, h, 1.0);
                if !frozen {
                    let back = self.heads[l - 1].backprop(&dz);
                    dh.data
                        .iter_mut()
                        .zip(&back.data)
                        .for_each(|(a, b)| *a += b);
                }
            }
            if frozen {
                continue;
            }
            // through tanh: d(pre) = dh ⊙ (1 − h²)
            let mut dpre = dh.clone();
            dpre.data
                .iter_mut()
                .zip(&h.data)
                .for_each(|(d, &hv)| *d *= 1.0 - hv * hv);
            let scale = objective.block_scale(l, num_layers);
            grads.blocks[l - 1].accumulate(&dpre, &pass.hidden[l - 1], scale);
            dh = self.blocks[l - 1].backprop(&dpre);
        }
        Ok(grads)
    }

    /// Plain gradient-descent update. Frozen backbones are left untouched.
    pub fn apply_gradients(&mut self, grads: &Gradients, lr: f64, update_backbone: bool) {
        if update_backbone {
            for (p, g) in self.blocks.iter_mut().zip(&grads.blocks) {
                p.step(g, lr);
            }
        }
        for (p, g) in self.heads.iter_mut().zip(&grads.heads) {
            p.step(g, lr);
        }
    }

    /// Per-exit predicted classes for every row of `x`.
    pub fn predict_all_exits(&self, x: &Matrix) -> Result<Vec<Vec<usize>>, TrainError> {
        let pass = self.forward_all_exits(x)?;
        Ok(pass
            .logits
            .iter()
            .map(|z| {
                (0..z.rows)
                    .map(|r| crate::exitsim::argmax(z.row(r)))
                    .collect()
            })
            .collect())
    }

    pub fn block_params(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .flat_map(|a| a.params().copied())
            .collect()
    }

    pub fn head_params(&self) -> Vec<f64> {
        self.heads
            .iter()
            .flat_map(|a| a.params().copied())
            .collect()
    }

    /// Mutable views of every block parameter, in [`Self::block_params`] order.
    pub fn block_params_mut(&mut self) -> Vec<&mut f64> {
        self.blocks
            .iter_mut()
            .flat_map(|a| a.params_mut())
            .collect()
    }

    /// Block parameters followed by head parameters.
    pub fn params_mut(&mut self) -> Vec<&mut f64> {
        let heads = self.heads.iter_mut().flat_map(|a| a.params_mut());
        self.blocks
            .iter_mut()
            .flat_map(|a| a.params_mut())
            .chain(heads)
            .collect()
    }

    pub fn head_params_mut(&mut self) -> Vec<&mut f64> {
        self.heads.iter_mut().flat_map(|a| a.params_mut()).collect()
    }
}

fn check_labels(pass: &ForwardPass, labels: &[usize], classes: usize) -> Result<(), TrainError> {
    if labels.len() != pass.batch_size() {
        return Err(TrainError::Shape(format!(
            "{} labels for a batch of {}",
            labels.len(),
            pass.batch_size()
        )));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
        return Err(TrainError::Shape(format!("label {y} outside 0..{classes}")));
    }
    Ok(())
}
