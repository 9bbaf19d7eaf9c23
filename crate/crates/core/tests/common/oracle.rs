//! Brute-force maximizer of the length-biased duration likelihood over the
//! probability simplex, for instances with at most three support points.
//! Shares no code with the EM implementation.

#![allow(dead_code)]

/// `(total, event)` pairs.
pub type Obs = [(f64, bool)];

pub fn support_of(obs: &Obs) -> Vec<f64> {
    let mut s: Vec<f64> = obs.iter().filter(|o| o.1).map(|o| o.0).collect();
    s.sort_by(f64::total_cmp);
    s.dedup();
    s
}

pub fn objective(support: &[f64], q: &[f64], obs: &Obs) -> f64 {
    let mut ll = 0.0;
    for &(t, event) in obs {
        if event {
            let j = support.iter().position(|&s| s == t).unwrap();
            ll += (q[j] / support[j]).ln();
        } else {
            let tail: f64 = support.iter().zip(q).filter(|(s, _)| **s >= t).map(|(s, q)| q / s).sum();
            ll += tail.ln();
        }
    }
    ll
}

fn candidates(center: &[f64], half_width: f64, step: f64) -> Vec<Vec<f64>> {
    let dim = center.len();
    let steps = (half_width / step).round() as i64;
    let mut out = Vec::new();
    match dim {
        1 => out.push(vec![1.0]),
        2 => {
            for a in -steps..=steps {
                let x = center[0] + a as f64 * step;
                if x > 0.0 && x < 1.0 {
                    out.push(vec![x, 1.0 - x]);
                }
            }
        }
        3 => {
            for a in -steps..=steps {
                for b in -steps..=steps {
                    let x = center[0] + a as f64 * step;
                    let y = center[1] + b as f64 * step;
                    let z = 1.0 - x - y;
                    if x > 0.0 && y > 0.0 && z > 0.0 {
                        out.push(vec![x, y, z]);
                    }
                }
            }
        }
        _ => panic!("oracle handles at most three support points"),
    }
    out
}

fn best(support: &[f64], obs: &Obs, cands: Vec<Vec<f64>>) -> (Vec<f64>, f64) {
    cands
        .into_iter()
        .map(|q| {
            let ll = objective(support, &q, obs);
            (q, ll)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
}

/// Grid search with step 1e-3 over the simplex, then two local refinements.
pub fn grid_maximizer(obs: &Obs) -> (Vec<f64>, Vec<f64>, f64) {
    let support = support_of(obs);
    let dim = support.len();
    let start = vec![0.5; dim];
    let (mut q, mut ll) = best(&support, obs, candidates(&start, 0.5, 1e-3));
    for (hw, step) in [(2e-3, 2e-5), (4e-5, 4e-7)] {
        let (q2, ll2) = best(&support, obs, candidates(&q, hw, step));
        if ll2 >= ll {
            q = q2;
            ll = ll2;
        }
    }
    (support, q, ll)
}
