//! Property tests for the distance lattice and loop fixed points.

mod common;

use common::props::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn join_is_idempotent(a in dist_type()) { join_idempotent(&a)?; }

    #[test]
    fn join_is_commutative(t in same_base_triple()) { join_commutative(&t)?; }

    #[test]
    fn join_is_associative(t in same_base_triple()) { join_associative(&t)?; }

    #[test]
    fn join_is_an_upper_bound(t in same_base_triple()) { join_upper_bound(&t)?; }

    #[test]
    fn join_is_monotone(t in same_base_triple()) { join_monotone(&t)?; }

    #[test]
    fn leq_agrees_with_join(t in same_base_triple()) { order_agrees_with_join(&t)?; }

    #[test]
    fn distance_leq_is_a_partial_order(a in distance(), b in distance(), c in distance()) {
        distance_partial_order(&a, &b, &c)?;
    }

    #[test]
    fn env_join_is_a_semilattice(a in env(), b in env(), c in env()) { env_join_laws(&a, &b, &c)?; }

    #[test]
    fn loop_fixpoints_are_stable(src in loop_program()) { loop_fixpoint_stable(&src)?; }

    #[test]
    fn printing_round_trips(src in loop_program()) { print_round_trip(&src)?; }
}
