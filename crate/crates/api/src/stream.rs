//! Resumable per-project event stream.
//!
//! A client that has seen seq `n` reconnects with `Last-Event-Seq: n` (or the
//! standard `Last-Event-ID`) and receives exactly the events with seq > n, in
//! order. The broadcast subscription is taken before the backlog is read, so
//! nothing committed in between is lost; live events at or below the last
//! delivered seq are dropped, so nothing is duplicated.

use std::collections::VecDeque;
use std::convert::Infallible;
use std::sync::Arc;

use axum::response::sse;
use futures::stream::{self, Stream, StreamExt};
use sakugaflow_core::{Engine, EngineError, EventRecord, ProjectId};
use tokio::sync::broadcast;

pub fn to_sse(record: &EventRecord) -> sse::Event {
    sse::Event::default()
        .id(record.seq.to_string())
        .event(record.event.stream_name())
        .data(serde_json::to_string(record).expect("record serializes"))
}

struct Live {
    engine: Arc<Engine>,
    project: ProjectId,
    rx: broadcast::Receiver<sakugaflow_core::ProjectEvent>,
    last: Option<u64>,
    pending: VecDeque<EventRecord>,
}

impl Live {
    fn accept(&mut self, record: EventRecord) -> Option<EventRecord> {
        if self.last.is_some_and(|l| record.seq <= l) {
            return None;
        }
        self.last = Some(record.seq);
        Some(record)
    }

    async fn next(mut self) -> Option<(EventRecord, Self)> {
        loop {
            if let Some(record) = self.pending.pop_front() {
                if let Some(r) = self.accept(record) {
                    return Some((r, self));
                }
                continue;
            }
            match self.rx.recv().await {
                Ok(ev) if ev.project == self.project => {
                    if let Some(r) = self.accept(ev.record) {
                        return Some((r, self));
                    }
                }
                Ok(_) => {}
                Err(broadcast::error::RecvError::Lagged(_)) => {
                    // Fell behind the channel; refill from the engine's log.
                    let from = self.last.map_or(0, |l| l + 1);
                    match self.engine.events_since(&self.project, from) {
                        Ok(records) => self.pending.extend(records),
                        Err(_) => return None,
                    }
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    }
}

/// Events of `project` with seq greater than `after` (all when `None`).
/// Without `follow` the stream ends once the backlog is sent.
pub fn project_events(
    engine: Arc<Engine>,
    project: ProjectId,
    after: Option<u64>,
    follow: bool,
) -> Result<impl Stream<Item = EventRecord> + Send + 'static, EngineError> {
    let rx = engine.subscribe();
    let from = after.map_or(0, |n| n + 1);
    let backlog = engine.events_since(&project, from)?;
    let last = backlog.last().map(|r| r.seq).or(after);
    let live = Live {
        engine,
        project,
        rx,
        last,
        pending: VecDeque::new(),
    };
    let tail = stream::unfold(live, Live::next);
    let tail = if follow { tail.left_stream() } else { stream::empty().right_stream() };
    Ok(stream::iter(backlog).chain(tail))
}

pub fn sse_events(
    stream: impl Stream<Item = EventRecord> + Send + 'static,
) -> impl Stream<Item = Result<sse::Event, Infallible>> + Send + 'static {
    stream.map(|r| Ok(to_sse(&r)))
}
