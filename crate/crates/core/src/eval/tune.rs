use super::wer::{wer, WerReport};
use crate::error::{Error, Result};
use crate::par::Execution;

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub beta: f64,
    pub gamma: f64,
    pub report: WerReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    /// Cells in `beta`-major order.
    pub cells: Vec<GridCell>,
    /// Index of the lowest-WER cell; ties go to smaller `beta`, then
    /// smaller `gamma`.
    pub best: usize,
}

impl TuneResult {
    pub fn best_cell(&self) -> &GridCell {
        &self.cells[self.best]
    }

    pub fn heatmap_tsv(&self) -> String {
        let mut out = String::from("beta\tgamma\twer_percent\n");
        for c in &self.cells {
            out.push_str(&format!("{}\t{}\t{}\n", c.beta, c.gamma, c.report.wer));
        }
        out
    }
}

/// Evaluates every `(beta, gamma)` pair. `decode` returns hypotheses aligned
/// with `refs`; cells run in parallel under `Execution::Parallel`.
pub fn tune_scales<T, F>(refs: &[Vec<T>], betas: &[f64], gammas: &[f64], exec: Execution, decode: F) -> Result<TuneResult>
where
    T: PartialEq + Sync,
    F: Fn(f64, f64) -> Result<Vec<Vec<T>>> + Sync + Send,
{
    if betas.is_empty() || gammas.is_empty() {
        return Err(Error::invalid("scale grids must be non-empty"));
    }
    let grid: Vec<(f64, f64)> = betas.iter().flat_map(|&b| gammas.iter().map(move |&g| (b, g))).collect();
    let cells = exec.map(&grid, |&(beta, gamma)| {
        let wrap = |e: Error| Error::GridCell {
            beta,
            gamma,
            source: Box::new(e),
        };
        let hyps = decode(beta, gamma).map_err(wrap)?;
        let report = wer(refs, &hyps).map_err(wrap)?;
        Ok(GridCell { beta, gamma, report })
    });
    let cells: Vec<GridCell> = cells.into_iter().collect::<Result<_>>()?;
    let best = (0..cells.len())
        .min_by(|&a, &b| {
            let (x, y) = (&cells[a], &cells[b]);
            x.report
                .counts
                .errors()
                .cmp(&y.report.counts.errors())
                .then(x.beta.total_cmp(&y.beta))
                .then(x.gamma.total_cmp(&y.gamma))
        })
        .expect("grid is non-empty");
    Ok(TuneResult { cells, best })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell_grid() {
        let refs = vec![vec![1, 2]];
        let r = tune_scales(&refs, &[0.3], &[0.1], Execution::Sequential, |_, _| Ok(vec![vec![1]])).unwrap();
        assert_eq!(r.cells.len(), 1);
        assert_eq!(r.best, 0);
        assert_eq!(r.best_cell().report.wer, 50.0);
    }

    #[test]
    fn ties_prefer_small_scales() {
        let refs = vec![vec![1, 2, 3]];
        let r = tune_scales(&refs, &[0.2, 0.0, 0.1], &[0.5, 0.0], Execution::Parallel, |b, _| {
            Ok(vec![if b > 0.15 { vec![1, 2, 3] } else { vec![1] }])
        })
        .unwrap();
        let best = r.best_cell();
        assert_eq!((best.beta, best.gamma), (0.2, 0.0));
        assert_eq!(r.heatmap_tsv().lines().count(), 7);
    }

    #[test]
    fn errors_carry_coordinates() {
        let refs = vec![vec![1]];
        let err = tune_scales(&refs, &[0.0, 1.0], &[0.0], Execution::Sequential, |b, _| {
            if b > 0.5 {
                Err(Error::invalid("boom"))
            } else {
                Ok(vec![vec![1]])
            }
        })
        .unwrap_err();
        assert!(matches!(err, Error::GridCell { beta, .. } if beta == 1.0));
        assert!(tune_scales(&refs, &[], &[0.0], Execution::Sequential, |_, _| Ok(vec![vec![1]])).is_err());
    }
}
