//! Input synthesis under the L0 norm by greedy pixel search.
//!
//! Each step tries every pixel not yet touched at each candidate value,
//! keeps the single change that most improves the requirement objective, and
//! stops once the requirement holds. A step that improves nothing, or running
//! out of pixels, ends the search without a result.

use crate::error::{Error, Result};
use crate::logic::Tag;
use crate::network::Network;

/// How many pixels may change, and to which values.
#[derive(Clone, Debug, PartialEq)]
pub struct L0Budget {
    pub max_pixels: usize,
    pub candidates: Vec<f64>,
}

impl Default for L0Budget {
    fn default() -> Self {
        L0Budget {
            max_pixels: 100,
            candidates: vec![0.0, 1.0],
        }
    }
}

impl L0Budget {
    pub fn pixels(max_pixels: usize) -> Self {
        L0Budget {
            max_pixels,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct L0Synthesis {
    pub input: Vec<f64>,
    /// Indices of the modified pixels, in the order they were changed.
    pub changed: Vec<usize>,
    pub forward_evals: usize,
}

/// Objective to push above zero; the requirement holds once it is positive
/// (or non-negative for neuron activation).
fn objective(net: &Network, x: &[f64], tag: &Tag) -> Result<(f64, bool)> {
    let acts = net.forward(x)?;
    Ok(match *tag {
        Tag::Nc { neuron } => {
            let u = acts.pre(neuron);
            (u, u >= 0.0)
        }
        Tag::NbcHigh { neuron, bound } => {
            let g = acts.pre(neuron) - bound;
            (g, g > 0.0)
        }
        Tag::NbcLow { neuron, bound } => {
            let g = bound - acts.pre(neuron);
            (g, g > 0.0)
        }
        ref other => {
            return Err(Error::Config(format!(
                "pixel search handles NC and NBC requirements, not {other}"
            )))
        }
    })
}

/// Greedy search for an input within `budget.max_pixels` changed pixels of
/// `t` that satisfies `tag`. `Ok(None)` means the search gave up.
pub fn symbolic_l0(
    net: &Network,
    t: &[f64],
    tag: &Tag,
    budget: &L0Budget,
) -> Result<Option<L0Synthesis>> {
    if budget.max_pixels == 0 {
        return Err(Error::Config("pixel budget must be at least 1".into()));
    }
    let mut x = t.to_vec();
    let (mut value, mut done) = objective(net, &x, tag)?;
    let mut evals = 1;
    let mut touched = vec![false; x.len()];
    let mut changed = Vec::new();
    while !done {
        if changed.len() == budget.max_pixels {
            return Ok(None);
        }
        let mut best: Option<(f64, bool, usize, f64)> = None;
        for i in 0..x.len() {
            if touched[i] {
                continue;
            }
            let original = x[i];
            for &c in &budget.candidates {
                if c == original {
                    continue;
                }
                x[i] = c;
                let (v, ok) = objective(net, &x, tag)?;
                evals += 1;
                if v > value && best.is_none_or(|(b, ..)| v > b) {
                    best = Some((v, ok, i, c));
                }
            }
            x[i] = original;
        }
        let Some((v, ok, i, c)) = best else {
            return Ok(None);
        };
        x[i] = c;
        touched[i] = true;
        changed.push(i);
        value = v;
        done = ok;
    }
    Ok(Some(L0Synthesis {
        input: x,
        changed,
        forward_evals: evals,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NeuronId;
    use crate::norm::l0_distance;

    /// Hidden neuron 0 fires only when pixel 3 is bright.
    fn pixel_net() -> Network {
        let mut w = vec![vec![0.0, 0.1]; 5];
        w[3] = vec![1.0, 0.1];
        Network::dense(
            5,
            vec![
                (w, vec![-0.5, 0.0], true),
                (vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0], false),
            ],
        )
        .unwrap()
    }

    #[test]
    fn single_pixel_flip_activates_target() {
        let net = pixel_net();
        let t = vec![0.2; 5];
        let tag = Tag::Nc {
            neuron: NeuronId::new(2, 0),
        };
        let out = symbolic_l0(&net, &t, &tag, &L0Budget::default())
            .unwrap()
            .unwrap();
        assert_eq!(out.changed, vec![3]);
        assert_eq!(out.input[3], 1.0);
        assert_eq!(l0_distance(&t, &out.input).unwrap(), 1);
    }

    #[test]
    fn satisfied_requirement_returns_input_unchanged() {
        let net = pixel_net();
        let t = vec![0.2, 0.2, 0.2, 0.9, 0.2];
        let tag = Tag::Nc {
            neuron: NeuronId::new(2, 0),
        };
        let out = symbolic_l0(&net, &t, &tag, &L0Budget::default())
            .unwrap()
            .unwrap();
        assert_eq!(out.input, t);
        assert!(out.changed.is_empty());
    }

    #[test]
    fn dead_neuron_gives_up_within_budget() {
        let net = Network::dense(
            3,
            vec![
                (vec![vec![-1.0, 1.0]; 3], vec![-0.1, 0.0], true),
                (vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0], false),
            ],
        )
        .unwrap();
        let tag = Tag::Nc {
            neuron: NeuronId::new(2, 0),
        };
        let r = symbolic_l0(&net, &[0.5; 3], &tag, &L0Budget::pixels(2)).unwrap();
        assert!(r.is_none());
    }

    #[test]
    fn nbc_bound_is_crossed_and_ssc_is_rejected() {
        let net = pixel_net();
        let tag = Tag::NbcHigh {
            neuron: NeuronId::new(2, 1),
            bound: 0.25,
        };
        let t = vec![0.2; 5];
        let out = symbolic_l0(&net, &t, &tag, &L0Budget::default())
            .unwrap()
            .unwrap();
        assert!(net.forward(&out.input).unwrap().pre(NeuronId::new(2, 1)) > 0.25);
        assert!(out.changed.len() <= 2);
        let ssc = Tag::Ssc {
            condition: NeuronId::new(2, 0),
            decision: NeuronId::new(3, 0),
        };
        assert!(symbolic_l0(&net, &t, &ssc, &L0Budget::default()).is_err());
    }
}
