//! Feedforward ReLU networks, ensembles, and interval bound propagation.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bounds::softmax;
use crate::error::{check_len, Error, Result};

/// Affine layer `W x + b`, with `W` stored row-major as `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.w.first().map_or(0, Vec::len)
    }

    pub fn outputs(&self) -> usize {
        self.b.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.w
            .iter()
            .zip(&self.b)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

/// ReLU on every hidden layer; the last layer's output are the logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

impl Mlp {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let net = Self { layers };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidNetwork("network has no layers".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.w.len() != layer.b.len() || layer.b.is_empty() {
                return Err(Error::InvalidNetwork(format!(
                    "layer {i}: {} weight rows for {} biases",
                    layer.w.len(),
                    layer.b.len()
                )));
            }
            let width = layer.inputs();
            if width == 0 || layer.w.iter().any(|r| r.len() != width) {
                return Err(Error::InvalidNetwork(format!(
                    "layer {i}: ragged weight matrix"
                )));
            }
            if i > 0 && width != self.layers[i - 1].outputs() {
                return Err(Error::InvalidNetwork(format!(
                    "layer {i} expects {width} inputs but layer {} has {} outputs",
                    i - 1,
                    self.layers[i - 1].outputs()
                )));
            }
            let finite = layer
                .b
                .iter()
                .chain(layer.w.iter().flatten())
                .all(|v| v.is_finite());
            if !finite {
                return Err(Error::InvalidNetwork(format!(
                    "layer {i}: non-finite parameter"
                )));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    /// Pre-activations of every layer; the last entry are the logits.
    pub fn trace(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        check_len(self.input_dim(), x.len())?;
        let mut out = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&h);
            if i + 1 < self.layers.len() {
                h = z.iter().map(|v| v.max(0.0)).collect();
            }
            out.push(z);
        }
        Ok(out)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(x)?.pop().expect("at least one layer"))
    }
}

/// Pre-activation bounds of one network, one `(lower, upper)` pair per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerBounds {
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
}

impl LayerBounds {
    pub fn logits(&self) -> (&[f64], &[f64]) {
        let last = self.lower.len() - 1;
        (&self.lower[last], &self.upper[last])
    }

    /// Whether `trace` (as returned by [`Mlp::trace`]) lies inside the bounds.
    pub fn contains(&self, trace: &[Vec<f64>], tol: f64) -> bool {
        trace.iter().enumerate().all(|(l, z)| {
            z.iter()
                .enumerate()
                .all(|(i, &v)| v >= self.lower[l][i] - tol && v <= self.upper[l][i] + tol)
        })
    }
}

/// Interval propagation of the box `center ± radius` through `net`, splitting
/// each weight matrix by sign.
pub fn interval_propagate(net: &Mlp, center: &[f64], radius: f64) -> Result<LayerBounds> {
    check_len(net.input_dim(), center.len())?;
    if !(radius >= 0.0) {
        return Err(Error::Usage(format!("radius must be >= 0, got {radius}")));
    }
    let mut lo: Vec<f64> = center.iter().map(|c| c - radius).collect();
    let mut hi: Vec<f64> = center.iter().map(|c| c + radius).collect();
    let mut bounds = LayerBounds {
        lower: Vec::new(),
        upper: Vec::new(),
    };
    for (i, layer) in net.layers.iter().enumerate() {
        let mut zl = Vec::with_capacity(layer.outputs());
        let mut zu = Vec::with_capacity(layer.outputs());
        for (row, b) in layer.w.iter().zip(&layer.b) {
            let (mut l, mut u) = (*b, *b);
            for (w, (xl, xu)) in row.iter().zip(lo.iter().zip(&hi)) {
                if *w >= 0.0 {
                    l += w * xl;
                    u += w * xu;
                } else {
                    l += w * xu;
                    u += w * xl;
                }
            }
            zl.push(l);
            zu.push(u);
        }
        if i + 1 < net.layers.len() {
            lo = zl.iter().map(|v| v.max(0.0)).collect();
            hi = zu.iter().map(|v| v.max(0.0)).collect();
        }
        bounds.lower.push(zl);
        bounds.upper.push(zu);
    }
    Ok(bounds)
}

/// Members share input and output dimensions; the ensemble's prediction is
/// the average of member softmax outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub inputs: usize,
    pub members: Vec<Mlp>,
}

impl Ensemble {
    pub fn new(members: Vec<Mlp>) -> Result<Self> {
        let inputs = members.first().map_or(0, Mlp::input_dim);
        let ens = Self { inputs, members };
        ens.validate()?;
        Ok(ens)
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::InvalidNetwork("ensemble has no members".into()));
        }
        let classes = self.members[0].output_dim();
        for (m, net) in self.members.iter().enumerate() {
            net.validate()
                .map_err(|e| Error::InvalidNetwork(format!("member {m}: {e}")))?;
            if net.input_dim() != self.inputs {
                return Err(Error::InvalidNetwork(format!(
                    "member {m} takes {} inputs, ensemble declares {}",
                    net.input_dim(),
                    self.inputs
                )));
            }
            if net.output_dim() != classes {
                return Err(Error::InvalidNetwork(format!(
                    "member {m} has {} outputs, member 0 has {classes}",
                    net.output_dim()
                )));
            }
        }
        if classes < 2 {
            return Err(Error::InvalidNetwork(
                "networks need at least two outputs".into(),
            ));
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.members[0].output_dim()
    }

    /// Averaged member probabilities.
    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut avg = vec![0.0; self.classes()];
        for net in &self.members {
            for (a, p) in avg.iter_mut().zip(softmax(&net.forward(x)?)?) {
                *a += p;
            }
        }
        let m = self.members.len() as f64;
        Ok(avg.into_iter().map(|v| v / m).collect())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ens: Self = serde_json::from_str(text)?;
        ens.validate()?;
        Ok(ens)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_json()? + "\n")?)
    }

    /// `members` networks with layer widths `widths` (input first), He-style
    /// normal weights and small normal biases.
    pub fn random(widths: &[usize], members: usize, seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) || members == 0 {
            return Err(Error::Usage(
                "need at least an input and an output width, all positive, and one member".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bias = Normal::new(0.0, 0.1).expect("valid std");
        let nets = (0..members)
            .map(|_| {
                let layers = widths
                    .windows(2)
                    .map(|pair| {
                        let weight =
                            Normal::new(0.0, (2.0 / pair[0] as f64).sqrt()).expect("valid std");
                        Layer {
                            w: (0..pair[1])
                                .map(|_| (0..pair[0]).map(|_| weight.sample(&mut rng)).collect())
                                .collect(),
                            b: (0..pair[1]).map(|_| bias.sample(&mut rng)).collect(),
                        }
                    })
                    .collect();
                Mlp { layers }
            })
            .collect();
        Self::new(nets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: Vec<Vec<f64>>, b: Vec<f64>) -> Mlp {
        Mlp::new(vec![Layer { w, b }]).unwrap()
    }

    #[test]
    fn forward_examples() {
        let id = single(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]);
        assert_eq!(id.forward(&[0.3, -2.0]).unwrap(), vec![0.3, -2.0]);
        let diff = single(vec![vec![1.0, -1.0]], vec![0.0]);
        assert_eq!(diff.forward(&[3.0, 1.0]).unwrap(), vec![2.0]);
        assert!(matches!(diff.forward(&[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn hidden_relu_clamps() {
        let net = Mlp::new(vec![
            Layer {
                w: vec![vec![1.0], vec![-1.0]],
                b: vec![0.0, 0.0],
            },
            Layer {
                w: vec![vec![1.0, 1.0]],
                b: vec![0.0],
            },
        ])
        .unwrap();
        // |x|
        assert_eq!(net.forward(&[-2.5]).unwrap(), vec![2.5]);
    }

    #[test]
    fn interval_examples() {
        let diff = single(vec![vec![1.0, -1.0]], vec![0.0]);
        let b = interval_propagate(&diff, &[0.5, 0.5], 0.5).unwrap();
        assert_eq!((b.lower[0][0], b.upper[0][0]), (-1.0, 1.0));

        let net = Mlp::new(vec![
            Layer {
                w: vec![vec![1.0]],
                b: vec![0.0],
            },
            Layer {
                w: vec![vec![1.0]],
                b: vec![0.0],
            },
        ])
        .unwrap();
        let b = interval_propagate(&net, &[0.0], 1.0).unwrap();
        assert_eq!((b.lower[1][0], b.upper[1][0]), (0.0, 1.0));
    }

    #[test]
    fn zero_radius_is_the_trace() {
        let ens = Ensemble::random(&[4, 8, 3], 1, 9).unwrap();
        let x = [0.1, -0.2, 0.3, 0.5];
        let b = interval_propagate(&ens.members[0], &x, 0.0).unwrap();
        let t = ens.members[0].trace(&x).unwrap();
        for l in 0..2 {
            for i in 0..t[l].len() {
                assert!((b.lower[l][i] - t[l][i]).abs() < 1e-12);
                assert!((b.upper[l][i] - t[l][i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn json_round_trip_and_schema() {
        let ens = Ensemble::random(&[2, 3, 2], 2, 1).unwrap();
        let text = ens.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["inputs"], 2);
        assert_eq!(
            v["members"][1]["layers"][0]["W"].as_array().unwrap().len(),
            3
        );
        assert_eq!(Ensemble::from_json(&text).unwrap(), ens);
    }

    #[test]
    fn rejects_mismatched_layers() {
        let bad = r#"{"inputs": 2, "members": [{"layers": [
            {"W": [[1, 0], [0, 1]], "b": [0, 0]},
            {"W": [[1, 0, 0]], "b": [0]}]}]}"#;
        assert!(matches!(
            Ensemble::from_json(bad),
            Err(Error::InvalidNetwork(_))
        ));
        let single_class = r#"{"inputs": 1, "members": [{"layers": [{"W": [[1]], "b": [0]}]}]}"#;
        assert!(Ensemble::from_json(single_class).is_err());
    }

    #[test]
    fn probabilities_are_averaged() {
        let ens = Ensemble::random(&[3, 5, 4], 3, 2).unwrap();
        let x = [0.2, 0.0, -1.0];
        let p = ens.probabilities(&x).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let manual: f64 = ens
            .members
            .iter()
            .map(|n| softmax(&n.forward(&x).unwrap()).unwrap()[1])
            .sum::<f64>()
            / 3.0;
        assert!((p[1] - manual).abs() < 1e-15);
    }
}
