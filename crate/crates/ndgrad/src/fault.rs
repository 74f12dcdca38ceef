//! Deliberately wrong backward rules, used as a negative control for the
//! gradient-check suite. Scoped to the calling thread.

use std::cell::Cell;

use crate::primitive::Primitive;

thread_local! {
    static FAULTY: Cell<Option<Primitive>> = const { Cell::new(None) };
}

pub(crate) fn current() -> Option<Primitive> {
    FAULTY.with(Cell::get)
}

/// Corrupts the backward rule of `primitive` on this thread until the guard
/// is dropped.
#[must_use]
pub fn inject(primitive: Primitive) -> FaultGuard {
    let previous = FAULTY.with(|f| f.replace(Some(primitive)));
    FaultGuard { previous }
}

pub struct FaultGuard {
    previous: Option<Primitive>,
}

impl Drop for FaultGuard {
    fn drop(&mut self) {
        FAULTY.with(|f| f.set(self.previous));
    }
}
