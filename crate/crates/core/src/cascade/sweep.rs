use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::cascade::{
    evaluate_with_seq, CascadePolicy, EvalData, EvalReport, InProcessServer, ServerBackend,
};
use crate::decision::Sensitivity;
use crate::error::{Error, Result};

/// Column contract for sweep reports.
pub const SWEEP_CSV_HEADER: &str =
    "s1,s2,accuracy,offload_frac,exit1_frac,mean_cost,Tn1,Tn2,Sp,St";

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub s1: f64,
    pub s2: f64,
    pub report: EvalReport,
}

/// Sensitivity-grid sweep results, ordered s1-major in the grid order given.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepMatrix {
    pub cells: Vec<SweepCell>,
}

impl SweepMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_CSV_HEADER);
        out.push('\n');
        for cell in &self.cells {
            let t = &cell.report.tally;
            let m = &cell.report.metrics;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                cell.s1,
                cell.s2,
                m.accuracy,
                m.offload_frac,
                m.exit1_frac,
                m.mean_cost,
                t.t_n1,
                t.t_n2,
                t.s_p,
                t.s_t
            )
            .expect("writing to a String cannot fail");
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv())
            .map_err(|e| Error::data(format!("cannot write sweep {}: {e}", path.display())))
    }
}

/// The default grid: 0.0 to 1.0 in steps of 0.1.
pub fn default_sensitivity_grid() -> Vec<Sensitivity> {
    (0..=10)
        .map(|i| Sensitivity::new(i as f64 / 10.0).expect("grid values lie in [0,1]"))
        .collect()
}

fn attach_cell_context(e: Error, s1: f64, s2: f64) -> Error {
    let msg = format!("(s1={s1}, s2={s2}): {e}");
    match e {
        Error::Domain(_) => Error::Domain(msg),
        Error::Config(_) => Error::Config(msg),
        Error::Train(_) => Error::Train(msg),
        Error::Data(_) => Error::Data(msg),
        Error::Network(_) => Error::Network(msg),
    }
}

fn sweep_impl(
    template: &CascadePolicy,
    s1_grid: &[Sensitivity],
    s2_grid: &[Sensitivity],
    data: &EvalData<'_>,
    parallel: bool,
) -> Result<SweepMatrix> {
    if s1_grid.is_empty() || s2_grid.is_empty() {
        return Err(Error::domain("sensitivity grids must be non-empty"));
    }
    let server = InProcessServer::new(&template.server.route)?;
    let pairs: Vec<(Sensitivity, Sensitivity)> = s1_grid
        .iter()
        .flat_map(|s1| s2_grid.iter().map(move |s2| (*s1, *s2)))
        .collect();

    let eval_cell = |&(s1, s2): &(Sensitivity, Sensitivity)| -> Result<SweepCell> {
        let policy = template.with_sensitivities(s1, s2);
        let report = evaluate_with_seq(&policy, data, &server as &dyn ServerBackend)
            .map_err(|e| attach_cell_context(e, s1.value(), s2.value()))?;
        Ok(SweepCell {
            s1: s1.value(),
            s2: s2.value(),
            report,
        })
    };

    #[cfg(feature = "parallel")]
    {
        if parallel {
            use rayon::prelude::*;
            let cells = pairs.par_iter().map(eval_cell).collect::<Result<Vec<_>>>()?;
            return Ok(SweepMatrix { cells });
        }
    }
    let _ = parallel;
    let cells = pairs.iter().map(eval_cell).collect::<Result<Vec<_>>>()?;
    Ok(SweepMatrix { cells })
}

/// Evaluates the policy template at every (s1, s2) grid pair. Cells are
/// independent and pure; with the `parallel` feature they evaluate
/// concurrently, and results are ordered s1-major either way.
pub fn sweep(
    template: &CascadePolicy,
    s1_grid: &[Sensitivity],
    s2_grid: &[Sensitivity],
    data: &EvalData<'_>,
) -> Result<SweepMatrix> {
    sweep_impl(template, s1_grid, s2_grid, data, true)
}

/// Sequential variant of [`sweep`].
pub fn sweep_seq(
    template: &CascadePolicy,
    s1_grid: &[Sensitivity],
    s2_grid: &[Sensitivity],
    data: &EvalData<'_>,
) -> Result<SweepMatrix> {
    sweep_impl(template, s1_grid, s2_grid, data, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::evaluate;

    fn grid(values: &[f64]) -> Vec<Sensitivity> {
        values.iter().map(|v| Sensitivity::new(*v).unwrap()).collect()
    }

    #[test]
    fn default_grid_has_eleven_clean_steps() {
        let g = default_sensitivity_grid();
        assert_eq!(g.len(), 11);
        assert_eq!(g[0].value(), 0.0);
        assert_eq!(g[3].value(), 0.3);
        assert_eq!(g[10].value(), 1.0);
    }

    #[test]
    fn single_cell_sweep_equals_evaluate() {
        let rows = crate::cascade::tests::replay_rows(30);
        let policy = crate::cascade::tests::replay_policy(0.4, 0.7);
        let data = EvalData::Replay(&rows);
        let matrix = sweep(&policy, &grid(&[0.4]), &grid(&[0.7]), &data).unwrap();
        assert_eq!(matrix.cells.len(), 1);
        let direct = evaluate(&policy, &data).unwrap();
        assert_eq!(matrix.cells[0].report, direct);
    }

    #[test]
    fn sweep_orders_cells_s1_major_and_matches_seq() {
        let rows = crate::cascade::tests::replay_rows(30);
        let policy = crate::cascade::tests::replay_policy(0.0, 0.0);
        let data = EvalData::Replay(&rows);
        let s1 = grid(&[0.0, 0.5]);
        let s2 = grid(&[0.2, 0.8]);
        let par = sweep(&policy, &s1, &s2, &data).unwrap();
        let seq = sweep_seq(&policy, &s1, &s2, &data).unwrap();
        assert_eq!(par, seq);
        let coords: Vec<(f64, f64)> = par.cells.iter().map(|c| (c.s1, c.s2)).collect();
        assert_eq!(coords, vec![(0.0, 0.2), (0.0, 0.8), (0.5, 0.2), (0.5, 0.8)]);
    }

    #[test]
    fn csv_has_the_contract_header_and_one_row_per_cell() {
        let rows = crate::cascade::tests::replay_rows(12);
        let policy = crate::cascade::tests::replay_policy(0.0, 0.0);
        let data = EvalData::Replay(&rows);
        let matrix = sweep(&policy, &grid(&[0.0, 1.0]), &grid(&[0.0, 1.0]), &data).unwrap();
        let csv = matrix.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), SWEEP_CSV_HEADER);
        assert_eq!(lines.count(), 4);
    }

    #[test]
    fn empty_grid_is_rejected() {
        let rows = crate::cascade::tests::replay_rows(5);
        let policy = crate::cascade::tests::replay_policy(0.0, 0.0);
        let data = EvalData::Replay(&rows);
        assert!(sweep(&policy, &[], &grid(&[0.5]), &data).is_err());
    }
}
