//! General binary tensor contraction in einsum notation.
//!
//! A descriptor such as `"nib,oibk->nok"` names every axis of both operands
//! and of the result. Each label is classified as
//!
//! - batch: present in both operands and the output,
//! - free: present in exactly one operand and the output,
//! - contracted: present in both operands but not the output.
//!
//! The operands are permuted to `[batch, free, contracted]` /
//! `[batch, contracted, free]` and multiplied as a batch of matrices.

use super::{permute, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContractSpec {
    text: String,
    lhs: Vec<char>,
    rhs: Vec<char>,
    out: Vec<char>,
}

impl ContractSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let err = |reason: String| Error::Contract {
            spec: text.to_string(),
            reason,
        };
        let (inputs, out) = text
            .split_once("->")
            .ok_or_else(|| err("missing `->`".into()))?;
        let (lhs, rhs) = inputs
            .split_once(',')
            .ok_or_else(|| err("expected two comma-separated operands".into()))?;
        let labels = |s: &str| -> Vec<char> { s.trim().chars().collect() };
        let (lhs, rhs, out) = (labels(lhs), labels(rhs), labels(out));
        for (name, labels) in [("left", &lhs), ("right", &rhs), ("output", &out)] {
            for (i, c) in labels.iter().enumerate() {
                if !c.is_ascii_alphabetic() {
                    return Err(err(format!("invalid index `{c}` in {name} operand")));
                }
                if labels[..i].contains(c) {
                    return Err(err(format!("index `{c}` repeated in {name} operand")));
                }
            }
        }
        for c in &out {
            if !lhs.contains(c) && !rhs.contains(c) {
                return Err(err(format!("output index `{c}` missing from both operands")));
            }
        }
        for c in &lhs {
            if !rhs.contains(c) && !out.contains(c) {
                return Err(err(format!(
                    "index `{c}` appears only in the left operand"
                )));
            }
        }
        for c in &rhs {
            if !lhs.contains(c) && !out.contains(c) {
                return Err(err(format!(
                    "index `{c}` appears only in the right operand"
                )));
            }
        }
        Ok(ContractSpec {
            text: text.to_string(),
            lhs,
            rhs,
            out,
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Descriptor computing the gradient of the left operand.
    pub(crate) fn lhs_grad(&self) -> ContractSpec {
        self.derived(&self.out, &self.rhs, &self.lhs)
    }

    /// Descriptor computing the gradient of the right operand.
    pub(crate) fn rhs_grad(&self) -> ContractSpec {
        self.derived(&self.lhs, &self.out, &self.rhs)
    }

    fn derived(&self, a: &[char], b: &[char], out: &[char]) -> ContractSpec {
        let s = |v: &[char]| v.iter().collect::<String>();
        let text = format!("{},{}->{}", s(a), s(b), s(out));
        ContractSpec {
            text,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
            out: out.to_vec(),
        }
    }

    fn err(&self, reason: String) -> Error {
        Error::Contract {
            spec: self.text.clone(),
            reason,
        }
    }

    fn extents(&self, lhs: &[usize], rhs: &[usize]) -> Result<Vec<(char, usize)>> {
        if lhs.len() != self.lhs.len() {
            return Err(self.err(format!(
                "left operand has rank {} but {} indices",
                lhs.len(),
                self.lhs.len()
            )));
        }
        if rhs.len() != self.rhs.len() {
            return Err(self.err(format!(
                "right operand has rank {} but {} indices",
                rhs.len(),
                self.rhs.len()
            )));
        }
        let mut sizes: Vec<(char, usize)> = self.lhs.iter().copied().zip(lhs.iter().copied()).collect();
        for (&c, &n) in self.rhs.iter().zip(rhs.iter()) {
            match sizes.iter().find(|(l, _)| *l == c) {
                Some(&(_, m)) if m != n => {
                    return Err(self.err(format!(
                        "index `{c}` has extent {m} on the left but {n} on the right"
                    )));
                }
                Some(_) => {}
                None => sizes.push((c, n)),
            }
        }
        Ok(sizes)
    }
}

fn size_of(sizes: &[(char, usize)], c: char) -> usize {
    sizes.iter().find(|(l, _)| *l == c).map(|&(_, n)| n).unwrap_or(1)
}

fn positions(labels: &[char], of: &[char]) -> Vec<usize> {
    of.iter()
        .map(|c| labels.iter().position(|l| l == c).expect("label present"))
        .collect()
}

/// Evaluates `spec` on two tensors.
pub fn contract(spec: &ContractSpec, lhs: &Tensor, rhs: &Tensor) -> Result<Tensor> {
    let sizes = spec.extents(lhs.shape(), rhs.shape())?;
    let batch: Vec<char> = spec
        .out
        .iter()
        .copied()
        .filter(|c| spec.lhs.contains(c) && spec.rhs.contains(c))
        .collect();
    let lfree: Vec<char> = spec
        .out
        .iter()
        .copied()
        .filter(|c| spec.lhs.contains(c) && !spec.rhs.contains(c))
        .collect();
    let rfree: Vec<char> = spec
        .out
        .iter()
        .copied()
        .filter(|c| spec.rhs.contains(c) && !spec.lhs.contains(c))
        .collect();
    let summed: Vec<char> = spec
        .lhs
        .iter()
        .copied()
        .filter(|c| spec.rhs.contains(c) && !spec.out.contains(c))
        .collect();

    let prod = |ls: &[char]| ls.iter().map(|&c| size_of(&sizes, c)).product::<usize>();
    let (nb, m, n, k) = (prod(&batch), prod(&lfree), prod(&rfree), prod(&summed));

    let lorder: Vec<char> = batch.iter().chain(&lfree).chain(&summed).copied().collect();
    let rorder: Vec<char> = batch.iter().chain(&summed).chain(&rfree).copied().collect();
    let a = permute(lhs.data(), lhs.shape(), &positions(&spec.lhs, &lorder));
    let b = permute(rhs.data(), rhs.shape(), &positions(&spec.rhs, &rorder));

    let mut c = vec![0.0; nb * m * n];
    for bi in 0..nb {
        let a = &a[bi * m * k..(bi + 1) * m * k];
        let b = &b[bi * k * n..(bi + 1) * k * n];
        let c = &mut c[bi * m * n..(bi + 1) * m * n];
        for i in 0..m {
            let crow = &mut c[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                for (cv, bv) in crow.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
    }

    let produced: Vec<char> = batch.iter().chain(&lfree).chain(&rfree).copied().collect();
    let produced_shape: Vec<usize> = produced.iter().map(|&c| size_of(&sizes, c)).collect();
    let out = permute(&c, &produced_shape, &positions(&produced, &spec.out));
    let out_shape = spec.out.iter().map(|&c| size_of(&sizes, c)).collect();
    Tensor::new(out_shape, out)
}
