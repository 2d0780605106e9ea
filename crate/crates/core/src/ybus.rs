//! Bus admittance matrix assembly.

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use crate::fault::FaultSpec;
use crate::network::{Branch, Grid, LoadModel, Transformer};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum YBusError {
    #[error("element {0:?} has zero series impedance")]
    ZeroImpedance(String),
    #[error("fault references unknown bus {0:?}")]
    UnknownFaultBus(String),
    #[error("fault at {bus} has non-positive resistance {r_on_ohm} ohm")]
    FaultResistance { bus: String, r_on_ohm: f64 },
}

/// Two-port admittance stamp of a series element, in pu.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementStamp {
    pub from: usize,
    pub to: usize,
    pub y_ff: Complex64,
    pub y_ft: Complex64,
    pub y_tf: Complex64,
    pub y_tt: Complex64,
}

impl ElementStamp {
    /// Complex power entering the element at both terminals, pu.
    pub fn terminal_powers(&self, v_from: Complex64, v_to: Complex64) -> (Complex64, Complex64) {
        let i_f = self.y_ff * v_from + self.y_ft * v_to;
        let i_t = self.y_tf * v_from + self.y_tt * v_to;
        (v_from * i_f.conj(), v_to * i_t.conj())
    }
}

/// Pi-equivalent line stamp with half the charging at each end.
pub fn branch_stamp(grid: &Grid, branch: &Branch) -> Result<ElementStamp, YBusError> {
    let from = grid.bus_index(&branch.from).expect("validated grid");
    let to = grid.bus_index(&branch.to).expect("validated grid");
    let level = grid.bus_level(from);
    let bases = grid.bases();
    let z = Complex64::new(
        bases.impedance_to_pu(branch.r_ohm, level),
        bases.impedance_to_pu(branch.x_ohm, level),
    );
    if z.norm() == 0.0 {
        return Err(YBusError::ZeroImpedance(branch.id.clone()));
    }
    let y = z.inv();
    let half_b = Complex64::new(0.0, 0.5 * bases.susceptance_us_to_pu(branch.b_us, level));
    Ok(ElementStamp {
        from,
        to,
        y_ff: y + half_b,
        y_ft: -y,
        y_tf: -y,
        y_tt: y + half_b,
    })
}

/// Transformer stamp with the off-nominal ratio `n` at the MV terminal and
/// the series impedance on the HV side of the ideal transformer.
pub fn transformer_stamp(grid: &Grid, tr: &Transformer) -> Result<ElementStamp, YBusError> {
    let from = grid.bus_index(&tr.from).expect("validated grid");
    let to = grid.bus_index(&tr.to).expect("validated grid");
    let scale = grid.s_base() / tr.rating_mva;
    let z = Complex64::new(tr.r_pu * scale, tr.x_pu * scale);
    if z.norm() == 0.0 {
        return Err(YBusError::ZeroImpedance(tr.id.clone()));
    }
    let y = z.inv();
    let n = tr.ratio();
    Ok(ElementStamp {
        from,
        to,
        y_ff: y,
        y_ft: -y / n,
        y_tf: -y / n,
        y_tt: y / (n * n),
    })
}

/// Shunt conductance of a bolted-resistance fault, pu.
pub fn fault_conductance_pu(grid: &Grid, fault: &FaultSpec) -> Result<(usize, f64), YBusError> {
    let bus = grid
        .bus_index(&fault.bus)
        .ok_or_else(|| YBusError::UnknownFaultBus(fault.bus.clone()))?;
    if !(fault.r_on_ohm > 0.0) {
        return Err(YBusError::FaultResistance {
            bus: fault.bus.clone(),
            r_on_ohm: fault.r_on_ohm,
        });
    }
    let r_pu = grid.bases().impedance_to_pu(fault.r_on_ohm, grid.bus_level(bus));
    Ok((bus, 1.0 / r_pu))
}

/// Dense complex bus admittance matrix in pu.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    y: DMatrix<Complex64>,
}

impl AdmittanceMatrix {
    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.y[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.y
    }

    pub fn row_sum(&self, i: usize) -> Complex64 {
        self.y.row(i).iter().sum()
    }

    /// Bus current injections `Y u`.
    pub fn currents(&self, voltages: &[Complex64]) -> Vec<Complex64> {
        let n = self.n();
        (0..n)
            .map(|i| (0..n).map(|j| self.y[(i, j)] * voltages[j]).sum())
            .collect()
    }

    pub fn add_shunt(&mut self, bus: usize, y: Complex64) {
        self.y[(bus, bus)] += y;
    }

    fn stamp(&mut self, s: &ElementStamp) {
        self.y[(s.from, s.from)] += s.y_ff;
        self.y[(s.from, s.to)] += s.y_ft;
        self.y[(s.to, s.from)] += s.y_tf;
        self.y[(s.to, s.to)] += s.y_tt;
    }
}

/// Assemble the bus admittance matrix.
///
/// Impedance loads are stamped as `conj(S_nom)` at 1 pu; every fault adds its
/// conductance to the diagonal of the faulted bus.
pub fn assemble_ybus(
    grid: &Grid,
    load_model: LoadModel,
    faults: &[FaultSpec],
) -> Result<AdmittanceMatrix, YBusError> {
    let n = grid.n_buses();
    let mut ybus = AdmittanceMatrix {
        y: DMatrix::from_element(n, n, Complex64::new(0.0, 0.0)),
    };
    for br in grid.branches().iter().filter(|b| b.in_service) {
        ybus.stamp(&branch_stamp(grid, br)?);
    }
    if let Some(tr) = grid.transformer() {
        ybus.stamp(&transformer_stamp(grid, tr)?);
    }
    if load_model == LoadModel::ConstantImpedance {
        for (i, s) in grid.load_pu().into_iter().enumerate() {
            ybus.add_shunt(i, s.conj());
        }
    }
    for f in faults {
        let (bus, g) = fault_conductance_pu(grid, f)?;
        ybus.add_shunt(bus, Complex64::new(g, 0.0));
    }
    Ok(ybus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{fixtures, load_grid, GridDocument};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn fault(bus: &str, r: f64) -> FaultSpec {
        FaultSpec {
            bus: bus.into(),
            r_on_ohm: r,
            t_on: 0.0,
            duration: 0.1,
        }
    }

    #[test]
    fn single_line_stamp() {
        let g = load_grid(&fixtures::two_bus_json(0.1, 0.0, 0.0)).unwrap();
        let y = assemble_ybus(&g, LoadModel::ConstantPq, &[]).unwrap();
        let expect = [[c(0.0, -10.0), c(0.0, 10.0)], [c(0.0, 10.0), c(0.0, -10.0)]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((y.get(i, j) - expect[i][j]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn fault_adds_diagonal_conductance() {
        let g = load_grid(&fixtures::two_bus_json(0.1, 0.0, 0.0)).unwrap();
        let base = assemble_ybus(&g, LoadModel::ConstantPq, &[]).unwrap();
        // 2.0 pu conductance = 0.5 pu resistance = 2 ohm at the 4 ohm base.
        let y = assemble_ybus(&g, LoadModel::ConstantPq, &[fault("B", 2.0)]).unwrap();
        assert!((y.get(1, 1) - base.get(1, 1) - c(2.0, 0.0)).norm() < 1e-12);
        assert_eq!(y.get(0, 0), base.get(0, 0));
        let err = assemble_ybus(&g, LoadModel::ConstantPq, &[fault("B", 0.0)]).unwrap_err();
        assert!(matches!(err, YBusError::FaultResistance { .. }));
    }

    #[test]
    fn impedance_loads_stamp_conjugate_demand() {
        let g = load_grid(&fixtures::two_bus_json(0.1, 50.0, 10.0)).unwrap();
        let pq = assemble_ybus(&g, LoadModel::ConstantPq, &[]).unwrap();
        let z = assemble_ybus(&g, LoadModel::ConstantImpedance, &[]).unwrap();
        assert!((z.get(1, 1) - pq.get(1, 1) - c(0.5, -0.1)).norm() < 1e-12);
    }

    /// Independent stamping oracle written directly from element parameters.
    fn oracle(grid: &Grid) -> DMatrix<Complex64> {
        let n = grid.n_buses();
        let mut m = DMatrix::from_element(n, n, c(0.0, 0.0));
        let zb = 20.0 * 20.0 / 100.0;
        for br in grid.branches().iter().filter(|b| b.in_service) {
            let i = grid.bus_index(&br.from).unwrap();
            let k = grid.bus_index(&br.to).unwrap();
            let y = c(1.0, 0.0) / c(br.r_ohm / zb, br.x_ohm / zb);
            let sh = c(0.0, br.b_us * 1e-6 * zb / 2.0);
            m[(i, i)] += y + sh;
            m[(k, k)] += y + sh;
            m[(i, k)] -= y;
            m[(k, i)] -= y;
        }
        let tr = grid.transformer().unwrap();
        let h = grid.bus_index(&tr.from).unwrap();
        let l = grid.bus_index(&tr.to).unwrap();
        let y = c(1.0, 0.0) / (c(tr.r_pu, tr.x_pu) * (100.0 / tr.rating_mva));
        let n_ratio = 1.0 + (tr.tap_position - tr.tap_neutral) as f64 * tr.tap_step_percent / 100.0;
        m[(h, h)] += y;
        m[(l, l)] += y / (n_ratio * n_ratio);
        m[(h, l)] -= y / n_ratio;
        m[(l, h)] -= y / n_ratio;
        m
    }

    #[test]
    fn cigre_matches_element_oracle_and_is_asymmetric_only_at_transformer() {
        let g = Grid::cigre12();
        let y = assemble_ybus(&g, LoadModel::ConstantPq, &[]).unwrap();
        let o = oracle(&g);
        let tr = g.transformer().unwrap();
        let h = g.bus_index(&tr.from).unwrap();
        let l = g.bus_index(&tr.to).unwrap();
        for i in 0..g.n_buses() {
            for j in 0..g.n_buses() {
                assert!((y.get(i, j) - o[(i, j)]).norm() < 1e-12, "({i},{j})");
            }
        }
        // With the ratio on the MV side the off-diagonals stay equal, but the
        // element is not reciprocal: y_hh != y_mm.
        let stamp = transformer_stamp(&g, tr).unwrap();
        assert!((stamp.y_ff - stamp.y_tt).norm() > 1e-3);
        for i in 0..g.n_buses() {
            for j in 0..g.n_buses() {
                if (i, j) == (h, l) || (i, j) == (l, h) {
                    continue;
                }
                assert!((y.get(i, j) - y.get(j, i)).norm() < 1e-12);
            }
        }
        // Row sums expose the tap: they are not the plain shunts at the
        // transformer terminals.
        let neutral = g.with_tap(0).unwrap();
        let y0 = assemble_ybus(&neutral, LoadModel::ConstantPq, &[]).unwrap();
        assert!((y.row_sum(l) - y0.row_sum(l)).norm() > 1e-3);
    }

    #[test]
    fn neutral_tap_is_symmetric_and_row_sums_are_shunts() {
        let g = Grid::cigre12().with_tap(0).unwrap();
        let faults = [fault("MV-08", 3.5)];
        let y = assemble_ybus(&g, LoadModel::ConstantImpedance, &faults).unwrap();
        let n = g.n_buses();
        for i in 0..n {
            for j in 0..n {
                assert!((y.get(i, j) - y.get(j, i)).norm() < 1e-12);
            }
        }
        let mut shunt = vec![c(0.0, 0.0); n];
        for br in g.branches().iter().filter(|b| b.in_service) {
            let b = c(0.0, br.b_us * 1e-6 * 4.0 / 2.0);
            shunt[g.bus_index(&br.from).unwrap()] += b;
            shunt[g.bus_index(&br.to).unwrap()] += b;
        }
        for (i, s) in g.load_pu().into_iter().enumerate() {
            shunt[i] += s.conj();
        }
        shunt[g.bus_index("MV-08").unwrap()] += c(4.0 / 3.5, 0.0);
        for i in 0..n {
            assert!((y.row_sum(i) - shunt[i]).norm() < 1e-12, "bus {i}");
        }
    }

    #[test]
    fn open_branch_equals_removed_branch() {
        let g = Grid::cigre12();
        let mut doc: GridDocument = g.to_document();
        doc.branches.retain(|b| b.in_service);
        let pruned = Grid::from_document(doc).unwrap();
        let a = assemble_ybus(&g, LoadModel::ConstantPq, &[]).unwrap();
        let b = assemble_ybus(&pruned, LoadModel::ConstantPq, &[]).unwrap();
        assert_eq!(a, b);
    }
}
