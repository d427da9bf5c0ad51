// Level-method boilerplate for `Field` and `SchemeMap` implementors.

/// Every level forwards to one generic method (`fn m<S: Level>`).
macro_rules! field_levels_same {
    ($m:ident) => {
        fn eval_l0(&self, x: &[$crate::ad::L0], t: $crate::ad::L0, out: &mut [$crate::ad::L0]) { self.$m(x, t, out) }
        fn eval_l1(&self, x: &[$crate::ad::L1], t: $crate::ad::L1, out: &mut [$crate::ad::L1]) { self.$m(x, t, out) }
        fn eval_l2(&self, x: &[$crate::ad::L2], t: $crate::ad::L2, out: &mut [$crate::ad::L2]) { self.$m(x, t, out) }
        fn eval_l3(&self, x: &[$crate::ad::L3], t: $crate::ad::L3, out: &mut [$crate::ad::L3]) { self.$m(x, t, out) }
        fn eval_l4(&self, x: &[$crate::ad::L4], t: $crate::ad::L4, out: &mut [$crate::ad::L4]) { self.$m(x, t, out) }
        fn eval_l5(&self, x: &[$crate::ad::L5], t: $crate::ad::L5, out: &mut [$crate::ad::L5]) { self.$m(x, t, out) }
        fn eval_l6(&self, x: &[$crate::ad::L6], t: $crate::ad::L6, out: &mut [$crate::ad::L6]) { self.$m(x, t, out) }
    };
}

/// Levels 0..=5 forward to a generic method over `S: Lift`; level 6 has nothing above it.
macro_rules! field_levels_lifted {
    ($m:ident) => {
        fn eval_l0(&self, x: &[$crate::ad::L0], t: $crate::ad::L0, out: &mut [$crate::ad::L0]) { self.$m(x, t, out) }
        fn eval_l1(&self, x: &[$crate::ad::L1], t: $crate::ad::L1, out: &mut [$crate::ad::L1]) { self.$m(x, t, out) }
        fn eval_l2(&self, x: &[$crate::ad::L2], t: $crate::ad::L2, out: &mut [$crate::ad::L2]) { self.$m(x, t, out) }
        fn eval_l3(&self, x: &[$crate::ad::L3], t: $crate::ad::L3, out: &mut [$crate::ad::L3]) { self.$m(x, t, out) }
        fn eval_l4(&self, x: &[$crate::ad::L4], t: $crate::ad::L4, out: &mut [$crate::ad::L4]) { self.$m(x, t, out) }
        fn eval_l5(&self, x: &[$crate::ad::L5], t: $crate::ad::L5, out: &mut [$crate::ad::L5]) { self.$m(x, t, out) }
        fn eval_l6(&self, _: &[$crate::ad::L6], _: $crate::ad::L6, _: &mut [$crate::ad::L6]) { $crate::ad::tower_exhausted() }
    };
}

macro_rules! scheme_levels_same {
    ($m:ident) => {
        fn eval_l0(&self, x: &[$crate::ad::L0], t: $crate::ad::L0, z: &[$crate::ad::L0], y: $crate::ad::L0, out: &mut [$crate::ad::L0]) { self.$m(x, t, z, y, out) }
        fn eval_l1(&self, x: &[$crate::ad::L1], t: $crate::ad::L1, z: &[$crate::ad::L1], y: $crate::ad::L1, out: &mut [$crate::ad::L1]) { self.$m(x, t, z, y, out) }
        fn eval_l2(&self, x: &[$crate::ad::L2], t: $crate::ad::L2, z: &[$crate::ad::L2], y: $crate::ad::L2, out: &mut [$crate::ad::L2]) { self.$m(x, t, z, y, out) }
        fn eval_l3(&self, x: &[$crate::ad::L3], t: $crate::ad::L3, z: &[$crate::ad::L3], y: $crate::ad::L3, out: &mut [$crate::ad::L3]) { self.$m(x, t, z, y, out) }
        fn eval_l4(&self, x: &[$crate::ad::L4], t: $crate::ad::L4, z: &[$crate::ad::L4], y: $crate::ad::L4, out: &mut [$crate::ad::L4]) { self.$m(x, t, z, y, out) }
        fn eval_l5(&self, x: &[$crate::ad::L5], t: $crate::ad::L5, z: &[$crate::ad::L5], y: $crate::ad::L5, out: &mut [$crate::ad::L5]) { self.$m(x, t, z, y, out) }
        fn eval_l6(&self, x: &[$crate::ad::L6], t: $crate::ad::L6, z: &[$crate::ad::L6], y: $crate::ad::L6, out: &mut [$crate::ad::L6]) { self.$m(x, t, z, y, out) }
    };
}

macro_rules! scheme_levels_lifted {
    ($m:ident) => {
        fn eval_l0(&self, x: &[$crate::ad::L0], t: $crate::ad::L0, z: &[$crate::ad::L0], y: $crate::ad::L0, out: &mut [$crate::ad::L0]) { self.$m(x, t, z, y, out) }
        fn eval_l1(&self, x: &[$crate::ad::L1], t: $crate::ad::L1, z: &[$crate::ad::L1], y: $crate::ad::L1, out: &mut [$crate::ad::L1]) { self.$m(x, t, z, y, out) }
        fn eval_l2(&self, x: &[$crate::ad::L2], t: $crate::ad::L2, z: &[$crate::ad::L2], y: $crate::ad::L2, out: &mut [$crate::ad::L2]) { self.$m(x, t, z, y, out) }
        fn eval_l3(&self, x: &[$crate::ad::L3], t: $crate::ad::L3, z: &[$crate::ad::L3], y: $crate::ad::L3, out: &mut [$crate::ad::L3]) { self.$m(x, t, z, y, out) }
        fn eval_l4(&self, x: &[$crate::ad::L4], t: $crate::ad::L4, z: &[$crate::ad::L4], y: $crate::ad::L4, out: &mut [$crate::ad::L4]) { self.$m(x, t, z, y, out) }
        fn eval_l5(&self, x: &[$crate::ad::L5], t: $crate::ad::L5, z: &[$crate::ad::L5], y: $crate::ad::L5, out: &mut [$crate::ad::L5]) { self.$m(x, t, z, y, out) }
        fn eval_l6(&self, _: &[$crate::ad::L6], _: $crate::ad::L6, _: &[$crate::ad::L6], _: $crate::ad::L6, _: &mut [$crate::ad::L6]) { $crate::ad::tower_exhausted() }
    };
}
