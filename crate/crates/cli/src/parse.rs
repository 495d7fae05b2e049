//! Value parsers for list, pair and grid flags.

use anyhow::{bail, Context, Result};
use sobolis::densities::{BetaParams, Bounds};
use sobolis::givendata::linspace;

/// `1,2,3` as floats.
pub fn floats(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .with_context(|| format!("not a number: {t:?}"))
        })
        .collect()
}

/// `1,3` as one-based indices.
pub fn indices(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .with_context(|| format!("not an index: {t:?}"))
        })
        .collect()
}

/// `a,b` as Beta shape parameters.
pub fn beta_pair(text: &str) -> Result<BetaParams> {
    match floats(text)?.as_slice() {
        [a, b] => Ok(BetaParams::new(*a, *b)?),
        _ => bail!("expected two Beta parameters `alpha,beta`, got {text:?}"),
    }
}

/// `a,b;a,b;...` with one pair per input.
pub fn beta_pairs(text: &str) -> Result<Vec<BetaParams>> {
    text.split(';').map(beta_pair).collect()
}

/// `lo:hi:count`, inclusive on both ends.
pub fn grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let [lo, hi, count] = parts.as_slice() else {
        bail!("expected a grid `lo:hi:count`, got {text:?}");
    };
    let lo: f64 = lo
        .trim()
        .parse()
        .with_context(|| format!("bad grid start in {text:?}"))?;
    let hi: f64 = hi
        .trim()
        .parse()
        .with_context(|| format!("bad grid end in {text:?}"))?;
    let count: usize = count
        .trim()
        .parse()
        .with_context(|| format!("bad grid count in {text:?}"))?;
    Ok(linspace(lo, hi, count)?)
}

/// Box from `--lower`/`--upper` lists; both or neither.
pub fn bounds(lower: Option<&str>, upper: Option<&str>) -> Result<Option<Bounds>> {
    match (lower, upper) {
        (None, None) => Ok(None),
        (Some(lo), Some(hi)) => Ok(Some(Bounds::new(floats(lo)?, floats(hi)?)?)),
        _ => bail!("--lower and --upper must be given together"),
    }
}
