//! Fluid bandwidth sharing and the per-link queue proxy.

use crate::scalar::{clamp, Scalar};
use crate::topology::{Link, LinkId, Path, Topology};

/// Per-link traffic of one tick, in bits per second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkLoad<S> {
    pub offered: S,
    pub delivered: S,
    pub dropped: S,
}

impl<S: Scalar> LinkLoad<S> {
    fn zero() -> Self {
        Self {
            offered: S::zero(),
            delivered: S::zero(),
            dropped: S::zero(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation<S> {
    /// Delivered rate per routed flow, in input order.
    pub throughput: Vec<S>,
    /// Link on which each throttled flow loses its excess; `None` when fully served.
    pub bottleneck: Vec<Option<LinkId>>,
    pub links: Vec<LinkLoad<S>>,
}

/// Max-min fair shares of `capacity` among `demands` (water filling).
pub fn max_min_shares<S: Scalar>(capacity: S, demands: &[S]) -> Vec<S> {
    let mut order: Vec<usize> = (0..demands.len()).collect();
    order.sort_by(|a, b| {
        demands[*a]
            .partial_cmp(&demands[*b])
            .unwrap()
            .then(a.cmp(b))
    });
    let mut shares = vec![S::zero(); demands.len()];
    let mut remaining = capacity;
    for (k, &i) in order.iter().enumerate() {
        let fair = remaining / S::of_count(demands.len() - k);
        let share = demands[i].min(fair);
        shares[i] = share;
        remaining = (remaining - share).max(S::zero());
    }
    shares
}

/// Shares every link max-min fairly among the flows crossing it; a flow then receives the
/// smallest of its per-link shares. The part of a flow's demand it cannot send is offered
/// to and dropped at its bottleneck link, which is the first link granting that minimum.
///
/// `routes[i]` is `(path, demand)` for routed flow `i`.
pub fn allocate_bandwidth<S: Scalar>(topo: &Topology<S>, routes: &[(&Path, S)]) -> Allocation<S> {
    let mut crossing: Vec<Vec<usize>> = vec![Vec::new(); topo.link_count()];
    for (i, (path, _)) in routes.iter().enumerate() {
        for l in path.links() {
            crossing[l.0].push(i);
        }
    }

    // share[(link, position in crossing[link])]
    let mut shares: Vec<Vec<S>> = Vec::with_capacity(topo.link_count());
    for (l, flows) in crossing.iter().enumerate() {
        let demands: Vec<S> = flows.iter().map(|i| routes[*i].1).collect();
        shares.push(max_min_shares(topo.link(LinkId(l)).capacity, &demands));
    }
    let share_of = |link: LinkId, flow: usize| {
        let pos = crossing[link.0].iter().position(|f| *f == flow).unwrap();
        shares[link.0][pos]
    };

    let mut throughput = Vec::with_capacity(routes.len());
    let mut bottleneck = Vec::with_capacity(routes.len());
    for (i, (path, demand)) in routes.iter().enumerate() {
        let per_link: Vec<S> = path.links().iter().map(|l| share_of(*l, i)).collect();
        let rate = per_link.iter().fold(*demand, |m, s| m.min(*s));
        throughput.push(rate);
        bottleneck.push(if rate < *demand {
            path.links()
                .iter()
                .zip(&per_link)
                .find(|(_, s)| **s == rate)
                .map(|(l, _)| *l)
        } else {
            None
        });
    }

    let mut links = vec![LinkLoad::zero(); topo.link_count()];
    for (i, (path, demand)) in routes.iter().enumerate() {
        for l in path.links() {
            let load = &mut links[l.0];
            load.delivered = load.delivered + throughput[i];
            load.offered = load.offered + throughput[i];
        }
        if let Some(b) = bottleneck[i] {
            let excess = *demand - throughput[i];
            links[b.0].offered = links[b.0].offered + excess;
            links[b.0].dropped = links[b.0].dropped + excess;
        }
    }
    Allocation {
        throughput,
        bottleneck,
        links,
    }
}

/// Queue proxy of one link: overload accumulates, spare capacity drains, bounded by a cap.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkState<S> {
    /// bits
    pub queue: S,
    /// bits
    pub queue_cap: S,
    /// extra delay drawn for the current tick, seconds
    pub noise: S,
}

impl<S: Scalar> LinkState<S> {
    /// `cap_seconds` of queue at link capacity.
    pub fn new(link: &Link<S>, cap_seconds: S) -> Self {
        Self {
            queue: S::zero(),
            queue_cap: cap_seconds * link.capacity,
            noise: S::zero(),
        }
    }

    /// Advances the queue by one tick given the offered rate (bits/s).
    pub fn step(&mut self, link: &Link<S>, offered: S, tick: S) {
        let next = self.queue + (offered - link.capacity) * tick;
        self.queue = clamp(next, S::zero(), self.queue_cap);
    }
}

/// `propagation + queue / capacity` plus the tick's noise draw.
pub fn effective_link_delay<S: Scalar>(link: &Link<S>, state: &LinkState<S>) -> S {
    link.propagation_delay + state.queue / link.capacity + state.noise
}
