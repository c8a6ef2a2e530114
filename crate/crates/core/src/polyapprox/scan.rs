//! Extremum search helpers shared by the exchange step and the error check.

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section maximisation of `g` on `[lo, hi]`. The result is never
/// worse than `g(start)` or either bracket end.
pub fn golden_max(g: impl Fn(f64) -> f64, lo: f64, hi: f64, start: f64) -> (f64, f64) {
    let mut best = (start, g(start));
    for x in [lo, hi] {
        let v = g(x);
        if v > best.1 {
            best = (x, v);
        }
    }
    if hi <= lo {
        return best;
    }
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..200 {
        if (b - a) <= 1e-15 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if gc >= gd {
            b = d;
            d = c;
            gd = gc;
            c = b - INV_PHI * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + INV_PHI * (b - a);
            gd = g(d);
        }
    }
    for (x, v) in [(c, gc), (d, gd)] {
        if v > best.1 {
            best = (x, v);
        }
    }
    best
}

/// Picks `n` sign-alternating extrema from sampled error values.
///
/// The samples are split into maximal runs of one sign and each run
/// contributes its largest-magnitude sample. Surplus extrema are dropped
/// smallest-first, merging the neighbours left adjacent with equal sign, so
/// the global maximum always survives. Returns fewer than `n` indices when
/// the samples do not alternate often enough.
pub fn signed_extrema(values: &[f64], n: usize) -> Vec<usize> {
    let mut picks = run_extrema(values);
    let mag = |i: usize| values[i].abs();
    while picks.len() > n {
        let last = picks.len() - 1;
        if picks.len() - n == 1 {
            if mag(picks[0]) <= mag(picks[last]) {
                picks.remove(0);
            } else {
                picks.pop();
            }
            continue;
        }
        let (pos, _) = picks
            .iter()
            .enumerate()
            .min_by(|a, b| mag(*a.1).total_cmp(&mag(*b.1)))
            .expect("non-empty");
        if pos == 0 || pos == last {
            picks.remove(pos);
        } else {
            picks.remove(pos);
            // picks[pos - 1] and picks[pos] now share a sign
            let keep = if mag(picks[pos - 1]) >= mag(picks[pos]) { pos - 1 } else { pos };
            let drop = if keep == pos { pos - 1 } else { pos };
            picks.remove(drop);
        }
    }
    picks
}

/// One largest-magnitude index per maximal constant-sign run; zeros extend
/// the current run.
pub fn run_extrema(values: &[f64]) -> Vec<usize> {
    let mut picks: Vec<usize> = Vec::new();
    let mut sign = 0.0;
    for (i, &v) in values.iter().enumerate() {
        let s = if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        };
        if s == 0.0 {
            continue;
        }
        if s != sign {
            picks.push(i);
            sign = s;
        } else if let Some(last) = picks.last_mut() {
            if v.abs() > values[*last].abs() {
                *last = i;
            }
        }
    }
    picks
}
