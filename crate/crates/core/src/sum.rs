//! Canonical summation order.
//!
//! Every emission-related accumulation in this crate is defined as the
//! left-to-right sequential sum below. Fixing one order makes serial and
//! parallel reconstructions bit-identical: parallelism is only ever applied
//! across independent sites, never inside an accumulation.

use num_traits::Float;

/// Left-to-right sequential sum in the element order of `values`.
///
/// This order is the reference for all emission computations; the
/// hardware-style pairwise reduction in
/// [`adder_tree_sum`](crate::reconstruct::adder_tree_sum) is verified
/// against it within a floating-point tolerance.
pub fn canonical_sum<T: Float>(values: &[T]) -> T {
    values.iter().fold(T::zero(), |acc, &v| acc + v)
}
