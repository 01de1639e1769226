//! Two-stage hyperparameter search: dropout first, then weight decay ×
//! learning rate at the winning dropout.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;

use super::train::{train, TrainConfig, DROPOUT_GRID, LEARNING_RATE_GRID, WEIGHT_DECAY_GRID};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub dropout: Vec<f64>,
    pub weight_decay: Vec<f64>,
    pub learning_rate: Vec<f64>,
    pub stage1_weight_decay: f64,
    pub stage1_learning_rate: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            dropout: DROPOUT_GRID.to_vec(),
            weight_decay: WEIGHT_DECAY_GRID.to_vec(),
            learning_rate: LEARNING_RATE_GRID.to_vec(),
            stage1_weight_decay: 1e-4,
            stage1_learning_rate: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub stage: u8,
    pub dropout: f64,
    pub weight_decay: f64,
    pub learning_rate: f64,
    /// Best validation NLL per seed; `None` marks a diverged run.
    pub seed_nll: Vec<Option<f64>>,
    /// Seed mean; `None` when any run diverged (scored as +∞).
    pub mean_nll: Option<f64>,
}

impl GridCell {
    pub fn score(&self) -> f64 {
        self.mean_nll.unwrap_or(f64::INFINITY)
    }

    fn same_point(&self, d: f64, wd: f64, lr: f64) -> bool {
        self.dropout == d && self.weight_decay == wd && self.learning_rate == lr
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub seeds: Vec<u64>,
    pub cells: Vec<GridCell>,
    pub winner: GridCell,
}

fn best(cells: &[GridCell]) -> Option<&GridCell> {
    // first cell wins ties
    cells
        .iter()
        .filter(|c| c.score().is_finite())
        .fold(None, |acc: Option<&GridCell>, c| match acc {
            Some(a) if a.score() <= c.score() => Some(a),
            _ => Some(c),
        })
}

fn run_cells<F>(stage: u8, points: &[(f64, f64, f64)], seeds: &[u64], exec: Exec, run: &F) -> Result<Vec<GridCell>>
where
    F: Fn(f64, f64, f64, u64) -> Result<f64> + Sync + Send,
{
    let jobs: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let results = exec.map(&jobs, |&(i, seed)| {
        let (d, wd, lr) = points[i];
        match run(d, wd, lr, seed) {
            Ok(v) if v.is_finite() => Ok(Some(v)),
            Ok(_) | Err(Error::NonFinite(_)) => Ok(None),
            Err(e) => Err(e),
        }
    });
    let results: Vec<Option<f64>> = results.into_iter().collect::<Result<_>>()?;
    Ok(points
        .iter()
        .zip(results.chunks(seeds.len()))
        .map(|(&(dropout, weight_decay, learning_rate), r)| {
            let mean_nll = r
                .iter()
                .copied()
                .collect::<Option<Vec<f64>>>()
                .map(|v| v.iter().sum::<f64>() / v.len() as f64);
            GridCell {
                stage,
                dropout,
                weight_decay,
                learning_rate,
                seed_nll: r.to_vec(),
                mean_nll,
            }
        })
        .collect())
}

/// Runs the search with an arbitrary per-run scorer `run(dropout, wd, lr, seed)`.
/// A run returning [`Error::NonFinite`] or a non-finite score counts as diverged.
pub fn grid_search_with<F>(grid: &GridSpec, seeds: &[u64], exec: Exec, run: F) -> Result<GridResult>
where
    F: Fn(f64, f64, f64, u64) -> Result<f64> + Sync + Send,
{
    if grid.dropout.is_empty() || grid.weight_decay.is_empty() || grid.learning_rate.is_empty() {
        return Err(Error::Config("grid axes must be non-empty".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("grid needs at least one seed".into()));
    }
    let (wd1, lr1) = (grid.stage1_weight_decay, grid.stage1_learning_rate);
    let stage1: Vec<_> = grid.dropout.iter().map(|&d| (d, wd1, lr1)).collect();
    let mut cells = run_cells(1, &stage1, seeds, exec, &run)?;
    let d_best = best(&cells)
        .ok_or_else(|| Error::NonFinite("every dropout cell diverged".into()))?
        .dropout;

    let mut stage2 = Vec::new();
    let mut reused = Vec::new();
    for &wd in &grid.weight_decay {
        for &lr in &grid.learning_rate {
            match cells.iter().find(|c| c.same_point(d_best, wd, lr)) {
                Some(c) => reused.push((stage2.len() + reused.len(), GridCell { stage: 2, ..c.clone() })),
                None => stage2.push((d_best, wd, lr)),
            }
        }
    }
    let mut fresh = run_cells(2, &stage2, seeds, exec, &run)?.into_iter();
    let total = stage2.len() + reused.len();
    let mut reused = reused.into_iter().peekable();
    let mut stage2_cells = Vec::with_capacity(total);
    for i in 0..total {
        match reused.peek() {
            Some((j, _)) if *j == i => stage2_cells.push(reused.next().expect("peeked").1),
            _ => stage2_cells.push(fresh.next().expect("one fresh cell per remaining point")),
        }
    }
    let winner = best(&stage2_cells)
        .ok_or_else(|| Error::NonFinite("every weight decay × learning rate cell diverged".into()))?
        .clone();
    cells.extend(stage2_cells);
    Ok(GridResult {
        seeds: seeds.to_vec(),
        cells,
        winner,
    })
}

/// Trains every cell on `train` and scores it by best validation NLL.
pub fn grid_search(train_ds: &Dataset, valid_ds: &Dataset, base: &TrainConfig, grid: &GridSpec, exec: Exec) -> Result<GridResult> {
    grid_search_with(grid, &base.seeds, exec, |dropout, weight_decay, learning_rate, seed| {
        let cfg = TrainConfig {
            dropout: Some(dropout),
            weight_decay,
            learning_rate,
            ..base.clone()
        };
        train(train_ds, valid_ds, &cfg, dropout, seed).map(|o| o.best_valid_nll)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_values() {
        let g = GridSpec::default();
        assert_eq!(g.dropout, [0.1, 0.2, 0.3, 0.4, 0.5]);
        assert_eq!(g.weight_decay, [1e-5, 1e-4, 1e-3, 1e-2]);
        assert_eq!(g.learning_rate, [1e-5, 1e-4, 1e-3, 1e-2]);
    }

    #[test]
    fn two_stage_search_finds_the_bowl_minimum() {
        let g = GridSpec::default();
        let r = grid_search_with(&g, &[1, 2], Exec::Sequential, |d, wd, lr, s| {
            Ok((d - 0.3).powi(2) + (wd.log10() + 3.0).powi(2) + (lr.log10() + 4.0).powi(2) + s as f64 * 1e-6)
        })
        .unwrap();
        assert_eq!((r.winner.dropout, r.winner.weight_decay, r.winner.learning_rate), (0.3, 1e-3, 1e-4));
        assert_eq!(r.cells.len(), 5 + 16);
        assert!(r.cells[..5].iter().all(|c| c.stage == 1));
        assert!(r.cells[5..].iter().all(|c| c.stage == 2 && c.dropout == 0.3));
        // stage-1 point (0.3, 1e-4, 1e-4) reappears in stage 2 with the same score
        let again = r.cells[5..].iter().find(|c| c.same_point(0.3, 1e-4, 1e-4)).unwrap();
        assert_eq!(again.mean_nll, r.cells[2].mean_nll);
    }

    #[test]
    fn diverged_cells_never_win() {
        let g = GridSpec {
            dropout: vec![0.1, 0.2],
            weight_decay: vec![1e-4],
            learning_rate: vec![1e-4, 1e-2],
            ..GridSpec::default()
        };
        let r = grid_search_with(&g, &[1, 2, 3], Exec::Sequential, |d, _wd, lr, _s| {
            if d == 0.1 || lr == 1e-2 {
                Err(Error::NonFinite("boom".into()))
            } else {
                Ok(5.0)
            }
        })
        .unwrap();
        assert_eq!(r.cells[0].mean_nll, None);
        assert_eq!(r.cells[0].score(), f64::INFINITY);
        assert_eq!((r.winner.dropout, r.winner.learning_rate), (0.2, 1e-4));
    }

    #[test]
    fn single_cell_grid() {
        let g = GridSpec {
            dropout: vec![0.2],
            weight_decay: vec![1e-4],
            learning_rate: vec![1e-4],
            ..GridSpec::default()
        };
        let r = grid_search_with(&g, &[1], Exec::Sequential, |_, _, _, _| Ok(1.5)).unwrap();
        assert_eq!(r.winner.mean_nll, Some(1.5));
        assert_eq!(r.winner.dropout, 0.2);
    }

    #[test]
    fn other_errors_propagate() {
        let r = grid_search_with(&GridSpec::default(), &[1], Exec::Sequential, |_, _, _, _| {
            Err(Error::Config("nope".into()))
        });
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
