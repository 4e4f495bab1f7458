#![allow(dead_code)]

use num_rational::Rational64;
use tkz_core::autmod::{twisted_slot_rep, AutomorphismData, TwistedSlotSpec};
use tkz_core::connection::{
    assemble_connection, build_omega_set, classical_connection, ConnectionMetadata, ConnectionSystem, OperatorOrdering,
    SlotReps,
};
use tkz_core::liealg::{build_algebra, build_irrep_sl2, AlgebraSpec};
use tkz_core::linalg::real;

pub fn r(n: i64, d: i64) -> Rational64 {
    Rational64::new(n, d)
}

fn meta(dims: Vec<usize>, order: u32) -> ConnectionMetadata {
    ConnectionMetadata {
        algebra: "sl(2)".into(),
        level: real(1.0),
        dims,
        slot_labels: vec![],
        ordering: OperatorOrdering::Displayed,
        automorphism_order: order,
    }
}

/// sl(2) at level 1 with spin-1/2 modules at `n` points and a trivial
/// twisted slot, twisted by the inner automorphism with the given fraction.
pub fn twisted_sl2(fraction: Rational64, n: usize) -> ConnectionSystem {
    let alg = build_algebra(&AlgebraSpec::sl(2)).unwrap();
    let aut = AutomorphismData::inner(&alg, &[fraction]).unwrap();
    let half = build_irrep_sl2(r(1, 2)).unwrap();
    let tw = twisted_slot_rep(&alg, &aut, &TwistedSlotSpec::Trivial).unwrap();
    let slots = SlotReps { passive_dim: 1, untwisted: vec![half; n], twisted: tw };
    let omega = build_omega_set(&alg, &aut, real(1.0), &slots, OperatorOrdering::Displayed).unwrap();
    assemble_connection(&omega, &aut, meta(omega.dims.clone(), aut.order)).unwrap()
}

/// Classical sl(2) KZ at level 1, spin-1/2 modules at `n` points and a
/// module of the given spin at the origin.
pub fn classical_sl2(n: usize, origin_spin: Rational64) -> ConnectionSystem {
    let alg = build_algebra(&AlgebraSpec::sl(2)).unwrap();
    let half = build_irrep_sl2(r(1, 2)).unwrap();
    let origin = build_irrep_sl2(origin_spin).unwrap();
    let slots = SlotReps { passive_dim: 1, untwisted: vec![half; n], twisted: origin };
    let dims = slots.dims();
    classical_connection(&alg, real(1.0), &slots, meta(dims, 1)).unwrap()
}
