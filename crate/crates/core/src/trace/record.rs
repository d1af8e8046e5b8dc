use super::{AccessEvent, AccessKind, EventSink, RoiMarkers, TraceError};
use crate::cg::{AccessObserver, CgProblem, SolveOptions, SolveRecord};
use crate::layout::{StructureMap, WORD_BYTES};

/// Turns solver accesses into labelled, timestamped [`AccessEvent`]s.
///
/// One tick per access; the first access of the ROI is at tick 0.
pub struct Recorder<'m, S: EventSink> {
    map: &'m StructureMap,
    clock: u64,
    sink: S,
}

impl<'m, S: EventSink> Recorder<'m, S> {
    pub fn new(map: &'m StructureMap, sink: S) -> Self {
        Self { map, clock: 0, sink }
    }

    fn emit(&mut self, kind: AccessKind, addr: u64) {
        let structure = self.map.lookup_span(addr, WORD_BYTES).map(|r| r.id);
        let ev = AccessEvent {
            time: self.clock,
            kind,
            addr,
            width: WORD_BYTES as u8,
            structure,
        };
        self.sink.event(&ev);
        self.clock += 1;
    }

    /// ROI covering everything recorded so far.
    pub fn roi(&self) -> RoiMarkers {
        RoiMarkers {
            roi_start: 0,
            roi_end: self.clock,
        }
    }

    pub fn into_sink(self) -> S {
        self.sink
    }
}

impl<S: EventSink> AccessObserver for Recorder<'_, S> {
    #[inline]
    fn load(&mut self, addr: u64) {
        self.emit(AccessKind::Load, addr);
    }

    #[inline]
    fn store(&mut self, addr: u64) {
        self.emit(AccessKind::Store, addr);
    }
}

/// Run a traced, single-threaded solve, streaming every ROI access to `sink`.
pub fn record_solve<S: EventSink>(
    problem: &CgProblem,
    opts: &SolveOptions,
    sink: S,
) -> Result<(SolveRecord, RoiMarkers, S), TraceError> {
    let mut rec = Recorder::new(problem.structure_map(), sink);
    let solve = problem.solve(opts, &mut rec)?;
    let roi = rec.roi();
    Ok((solve, roi, rec.into_sink()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cg::{PoissonSystem, DEFAULT_TOL_FACTOR};
    use crate::layout::StructureId;

    #[test]
    fn events_are_labelled_and_ordered() {
        let sys = PoissonSystem::generate(3, DEFAULT_TOL_FACTOR).unwrap();
        let p = sys.problem().unwrap();
        let (solve, roi, events) = record_solve(&p, &SolveOptions::new(sys.tol, 100), Vec::new()).unwrap();
        assert!(solve.converged);
        assert_eq!(roi.roi_end, events.len() as u64);
        assert!(events.windows(2).all(|w| w[0].time < w[1].time));
        assert!(events.iter().all(|e| e.structure.is_some()));
        assert!(events.iter().all(|e| e.structure != Some(StructureId::Pad)));
    }

    #[test]
    fn spmv_loads_av_and_ac_equally() {
        let sys = PoissonSystem::generate(4, DEFAULT_TOL_FACTOR).unwrap();
        let p = sys.problem().unwrap();
        let (_, _, events) = record_solve(&p, &SolveOptions::new(sys.tol, 100), Vec::new()).unwrap();
        let count = |id| events.iter().filter(|e| e.structure == Some(id)).count();
        assert_eq!(count(StructureId::Av), count(StructureId::Ac));
    }

    #[test]
    fn zero_iteration_budget_gives_empty_roi() {
        let sys = PoissonSystem::generate(2, DEFAULT_TOL_FACTOR).unwrap();
        let p = sys.problem().unwrap();
        let (_, roi, events) = record_solve(&p, &SolveOptions::new(sys.tol, 0), Vec::new()).unwrap();
        assert!(events.is_empty());
        assert!(roi.is_empty());
        assert!(!roi.contains(0));
    }
}
