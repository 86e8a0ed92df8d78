use crate::convolve::{semigroup_run, ConvolutionMethod};
use crate::error::Result;
use crate::parallel;

use super::{emit, ExperimentSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemigroupRow {
    pub method: ConvolutionMethod,
    pub sigma: f64,
    pub expected: f64,
    pub fitted: f64,
    pub relative_error: f64,
}

/// Iterated filtering of a blob of blur `acquisition.c` with each `sigma`
/// of the grid, by both convolution methods.
pub fn run_semigroup(spec: &ExperimentSpec) -> Result<Vec<SemigroupRow>> {
    let c = spec.acquisition.c;
    let n = spec.grid.n_iter;
    let cases: Vec<(ConvolutionMethod, f64)> = [ConvolutionMethod::Dct, ConvolutionMethod::Sampled]
        .into_iter()
        .flat_map(|m| spec.grid.sigma.iter().map(move |&s| (m, s)))
        .collect();
    let rows = parallel::map(&cases, |&(method, sigma)| {
        semigroup_run(c, sigma, n, method).map(|r| SemigroupRow {
            method,
            sigma,
            expected: r.expected,
            fitted: r.fitted,
            relative_error: r.relative_error,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    emit(spec, "semigroup.csv", |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["method", "sigma", "n_iter", "expected", "fitted", "relative_error"])?;
        for r in &rows {
            out.write_record([
                match r.method {
                    ConvolutionMethod::Dct => "dct".to_string(),
                    ConvolutionMethod::Sampled => "sampled".to_string(),
                },
                format!("{}", r.sigma),
                n.to_string(),
                format!("{:.8e}", r.expected),
                format!("{:.8e}", r.fitted),
                format!("{:.8e}", r.relative_error),
            ])?;
        }
        Ok(out.flush().map_err(|e| crate::Error::Csv(e.into()))?)
    })?;
    Ok(rows)
}
