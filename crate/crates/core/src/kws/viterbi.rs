use super::{KeywordModel, KwsError, Result, LOG_FLOOR};
use crate::netcore::Posteriorgram;

/// Relative tolerance under which two path scores count as tied.
const TIE_TOL: f64 = 1e-9;

fn ln(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

/// Best keyword segment `[m, n]` under the path graph
///
/// ```text
/// filler*  (blank* u1+ blank* u2+ ... uK+ blank*)  filler*
/// ```
///
/// where a filler frame is silence or garbage. Paths are scored by summed log
/// posteriors. Among tied paths the earliest segment wins, then the
/// shortest.
pub fn viterbi_locate(post: &Posteriorgram, km: &KeywordModel) -> Result<(usize, usize)> {
    let t_len = post.frames();
    if t_len == 0 {
        return Err(KwsError::Empty);
    }
    km.validate(Some(post.classes()))?;
    let units = km.units.len();
    if t_len < units {
        return Err(KwsError::TooShort { frames: t_len, units });
    }

    let filler: Vec<f64> = (0..t_len)
        .map(|t| ln(post.get(t, km.silence)).max(ln(post.get(t, km.garbage))))
        .collect();
    let mut prefix = vec![0.0; t_len + 1];
    for t in 0..t_len {
        prefix[t + 1] = prefix[t] + filler[t];
    }
    let suffix = |n: usize| prefix[t_len] - prefix[n + 1];

    // States: even 2k = blank before unit k (or after the last), odd 2k+1 = unit k.
    let s_len = 2 * units + 1;
    let emit: Vec<f64> = (0..t_len * s_len)
        .map(|i| {
            let (t, s) = (i / s_len, i % s_len);
            let class = if s % 2 == 0 { km.blank } else { km.units[s / 2] };
            ln(post.get(t, class))
        })
        .collect();

    let ninf = f64::NEG_INFINITY;
    let mut best = ninf;
    let mut scores = vec![ninf; t_len * t_len];
    let mut cur = vec![ninf; s_len];
    let mut next = vec![ninf; s_len];
    for m in 0..t_len {
        cur.iter_mut().for_each(|v| *v = ninf);
        cur[0] = emit[m * s_len];
        cur[1] = emit[m * s_len + 1];
        for n in m..t_len {
            if n > m {
                for s in 0..s_len {
                    let mut v = cur[s];
                    if s >= 1 {
                        v = v.max(cur[s - 1]);
                    }
                    if s >= 3 && s % 2 == 1 {
                        v = v.max(cur[s - 2]);
                    }
                    next[s] = v + emit[n * s_len + s];
                }
                std::mem::swap(&mut cur, &mut next);
            }
            let kw = cur[s_len - 1].max(cur[s_len - 2]);
            if kw > ninf {
                let total = prefix[m] + kw + suffix(n);
                scores[m * t_len + n] = total;
                best = best.max(total);
            }
        }
    }
    let tol = TIE_TOL * best.abs().max(1.0);
    for m in 0..t_len {
        for n in m..t_len {
            if scores[m * t_len + n] >= best - tol {
                return Ok((m, n));
            }
        }
    }
    unreachable!("a feasible path exists when T >= number of units")
}
