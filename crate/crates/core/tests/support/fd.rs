#![allow(dead_code)]

//! Central-difference gradient checks against the tape.

use polyckt::numcore::*;
use rand::Rng;

pub fn random(dims: &[usize], rng: &mut impl Rng, lo: f64, hi: f64) -> Tensor {
    let n = dims.iter().product();
    Tensor::new(dims.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Compares tape gradients of `build` against central differences with step
/// 1e-6, for every entry of every input. The scalar is `sum(out * probe)`
/// with a fixed random probe so every output entry contributes.
pub fn fd_check(inputs: &[Tensor], rng: &mut impl Rng, tol: f64, build: &dyn Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let eval = |xs: &[Tensor], probe: Option<&Tensor>| -> (f64, Option<Vec<Tensor>>, Tensor) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = build(&mut tape, &vars);
        let value = tape.value(out).clone();
        match probe {
            None => (0.0, None, value),
            Some(p) => {
                let pv = tape.leaf(p.clone());
                let prod = tape.mul(out, pv).unwrap();
                let flat = tape.reshape(prod, &[1, p.len()]).unwrap();
                let ones = tape.leaf(Tensor::full(&[p.len(), 1], 1.0));
                let loss = tape.matmul(flat, ones).unwrap();
                let loss = tape.reshape(loss, &[1]).unwrap();
                let g = tape.grad(loss, &vars).unwrap();
                (tape.value(loss).item(), Some(g), value)
            }
        }
    };
    let (_, _, out) = eval(inputs, None);
    let probe = random(out.dims(), rng, -1.0, 1.0);
    let (_, grads, _) = eval(inputs, Some(&probe));
    let grads = grads.unwrap();
    let h = 1e-6;
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (k, x) in inputs.iter().enumerate() {
        for e in 0..x.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[e] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[e] -= h;
            let fd = (eval(&plus, Some(&probe)).0 - eval(&minus, Some(&probe)).0) / (2.0 * h);
            let ad = grads[k].data()[e];
            num = num.max((fd - ad).abs());
            den = den.max(fd.abs().max(ad.abs()));
        }
    }
    let rel = num / den.max(1e-12);
    assert!(rel < tol, "relative error {rel}");
    rel
}
