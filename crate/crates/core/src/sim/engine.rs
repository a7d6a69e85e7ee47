use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dispatch, Scheduling, SimConfig, SimError, Variant};
use crate::model::{sample_exp1, CapacityModulation, Sampler};
use crate::stability::{default_lb_stage, lower_bound_capacities_from, subsystem_chain};

const ARRIVAL_STREAM: u64 = 0;
const INITIAL_STREAM: u64 = 1;
const DISPATCH_STREAM: u64 = 2;
const ROS_STREAM: u64 = 3;
const MODULATION_STREAM: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Order-preserving key for nonnegative finite floats.
fn key(x: f64) -> u64 {
    debug_assert!(x >= 0.0 && x.is_finite());
    x.to_bits()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Event {
    Arrival,
    /// A copy finishes at a server.
    Copy { server: usize, slot: usize },
    /// A lower-bound job finishes (all its copies progress together).
    Type { ty: usize, slot: usize },
    /// A modulation clock rings.
    Ring { server: usize },
}

/// Snapshot of one job in the system.
#[derive(Debug, Clone, PartialEq)]
pub struct JobRecord {
    pub ty: usize,
    pub requirement: f64,
    /// `(server, attained service)` for each live or finished copy.
    pub attained: Vec<(usize, f64)>,
    pub arrival_time: f64,
}

#[derive(Debug, Clone)]
struct CopyState {
    server: usize,
    /// PS: virtual finish time; FCFS: arrival sequence number.
    key: u64,
    /// PS: server virtual time at insertion.
    start: f64,
    /// ROS: index in the server's waiting list.
    pos: usize,
    done: bool,
}

#[derive(Debug, Clone)]
struct Job {
    ty: usize,
    size: f64,
    arrival: f64,
    seq: u64,
    /// Lower bound: type virtual time at insertion.
    type_start: f64,
    copies: Vec<CopyState>,
}

#[derive(Debug, Clone, Default)]
struct Server {
    base: f64,
    cap: f64,
    /// Service a PS copy present throughout would have received.
    v: f64,
    ps: BTreeSet<(u64, usize)>,
    fifo: BTreeSet<(u64, usize)>,
    ros: Vec<usize>,
    in_service: Option<usize>,
    remaining: f64,
    copies: usize,
    next_ring: f64,
}

#[derive(Debug, Clone, Default)]
struct TypeClock {
    u: f64,
    set: BTreeSet<(u64, usize)>,
}

/// One replication of the stochastic system, advanced event by event.
pub struct Simulation {
    dispatch: Dispatch,
    scheduling: Scheduling,
    variant: Variant,
    service: Sampler,
    modulation: Option<CapacityModulation>,
    lambda: f64,
    type_servers: Vec<Vec<usize>>,
    cum_p: Vec<f64>,
    /// Upper bound: `R(c)` per type.
    least_loaded: Vec<Vec<usize>>,
    /// Lower bound: whether a type belongs to `C_iota`.
    admitted: Vec<bool>,
    clocks: Vec<TypeClock>,
    servers: Vec<Server>,
    jobs: Vec<Option<Job>>,
    free: Vec<usize>,
    per_type: Vec<usize>,
    alive: usize,
    now: f64,
    next_arrival: f64,
    seq: u64,
    events: u64,
    departures: u64,
    copy_counts: Vec<usize>,
    rng_arrival: ChaCha8Rng,
    rng_dispatch: ChaCha8Rng,
    rng_ros: ChaCha8Rng,
    rng_mod: ChaCha8Rng,
}

impl Simulation {
    pub fn new(cfg: &SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let top = &cfg.topology;
        let k = top.num_servers();
        let n = top.num_types();
        let chain = subsystem_chain(top);

        let mut base = top.capacities.clone();
        let mut admitted = vec![true; n];
        if cfg.variant == Variant::LowerBound {
            let stage = cfg.lb_stage.unwrap_or_else(|| default_lb_stage(top));
            base = lower_bound_capacities_from(top, &chain, stage).map_err(|e| SimError::Config(e.to_string()))?;
            let live = &chain.stages[stage - 1].types;
            admitted = (0..n).map(|c| live.contains(&c)).collect();
        }
        let mut acc = 0.0;
        let cum_p = top
            .types
            .iter()
            .map(|t| {
                acc += t.p;
                acc
            })
            .collect();

        let mut sim = Simulation {
            dispatch: cfg.dispatch,
            scheduling: cfg.scheduling,
            variant: cfg.variant,
            service: cfg.service.sampler(),
            modulation: cfg.modulation.clone(),
            lambda: top.lambda,
            type_servers: top.types.iter().map(|t| t.servers.clone()).collect(),
            cum_p,
            least_loaded: chain.least_loaded_of.clone(),
            admitted,
            clocks: vec![TypeClock::default(); n],
            servers: base
                .iter()
                .map(|&b| Server { base: b, cap: b, next_ring: f64::INFINITY, ..Server::default() })
                .collect(),
            jobs: Vec::new(),
            free: Vec::new(),
            per_type: vec![0; n],
            alive: 0,
            now: 0.0,
            next_arrival: f64::INFINITY,
            seq: 0,
            events: 0,
            departures: 0,
            copy_counts: vec![0; k],
            rng_arrival: stream(cfg.seed, ARRIVAL_STREAM),
            rng_dispatch: stream(cfg.seed, DISPATCH_STREAM),
            rng_ros: stream(cfg.seed, ROS_STREAM),
            rng_mod: stream(cfg.seed, MODULATION_STREAM),
        };

        if let Some(m) = &sim.modulation {
            for s in 0..k {
                let slow = m.sample_slowdown(&mut sim.rng_mod);
                sim.servers[s].cap = sim.servers[s].base / slow;
                sim.servers[s].next_ring = m.epsilon * sample_exp1(&mut sim.rng_mod);
            }
        }
        if let Some(init) = &cfg.initial_state {
            let mut rng = stream(cfg.seed, INITIAL_STREAM);
            for (ty, &count) in init.iter().enumerate() {
                for _ in 0..count {
                    let size = sim.service.sample(&mut rng);
                    if sim.admitted[ty] {
                        sim.place(ty, size);
                    }
                }
            }
        }
        if sim.lambda > 0.0 {
            sim.next_arrival = sample_exp1(&mut sim.rng_arrival) / sim.lambda;
        }
        Ok(sim)
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn departures(&self) -> u64 {
        self.departures
    }

    pub fn jobs_in_system(&self) -> usize {
        self.alive
    }

    pub fn jobs_per_type(&self) -> &[usize] {
        &self.per_type
    }

    /// Live copies per server, `M_s`.
    pub fn copies_per_server(&self) -> &[usize] {
        &self.copy_counts
    }

    pub fn capacity(&self, server: usize) -> f64 {
        self.servers[server].cap
    }

    fn type_rate(&self, ty: usize) -> f64 {
        self.type_servers[ty]
            .iter()
            .map(|&s| self.servers[s].cap / self.servers[s].copies as f64)
            .fold(0.0, f64::max)
    }

    /// Service rate of each live copy at `server`.
    pub fn copy_rates(&self, server: usize) -> Vec<f64> {
        let sv = &self.servers[server];
        if self.variant == Variant::LowerBound {
            return self
                .jobs
                .iter()
                .flatten()
                .filter(|j| j.copies.iter().any(|c| c.server == server))
                .map(|j| self.type_rate(j.ty))
                .collect();
        }
        match self.scheduling {
            Scheduling::Ps => vec![sv.cap / sv.copies as f64; sv.copies],
            _ => {
                let mut r = vec![0.0; sv.copies];
                if sv.in_service.is_some() {
                    r[0] = sv.cap;
                }
                r
            }
        }
    }

    pub fn jobs(&self) -> Vec<JobRecord> {
        self.jobs
            .iter()
            .flatten()
            .map(|j| JobRecord {
                ty: j.ty,
                requirement: j.size,
                attained: j.copies.iter().map(|c| (c.server, self.attained(j, c))).collect(),
                arrival_time: j.arrival,
            })
            .collect()
    }

    fn attained(&self, job: &Job, copy: &CopyState) -> f64 {
        if copy.done {
            return job.size;
        }
        if self.variant == Variant::LowerBound {
            return self.clocks[job.ty].u - job.type_start;
        }
        let sv = &self.servers[copy.server];
        match self.scheduling {
            Scheduling::Ps => sv.v - copy.start,
            _ => {
                let in_service = sv.in_service.and_then(|slot| self.jobs[slot].as_ref()).map_or(false, |j| j.seq == job.seq);
                if in_service {
                    job.size - sv.remaining
                } else {
                    0.0
                }
            }
        }
    }

    /// Time and kind of the next event; time is infinite if none is pending.
    pub fn peek(&self) -> (f64, Event) {
        let mut best = (self.next_arrival, Event::Arrival);
        if self.variant == Variant::LowerBound {
            for (ty, clock) in self.clocks.iter().enumerate() {
                if let Some(&(fin, slot)) = clock.set.first() {
                    let dt = ((f64::from_bits(fin) - clock.u) / self.type_rate(ty)).max(0.0);
                    if self.now + dt < best.0 {
                        best = (self.now + dt, Event::Type { ty, slot });
                    }
                }
            }
        } else {
            for (server, sv) in self.servers.iter().enumerate() {
                let next = match self.scheduling {
                    Scheduling::Ps => sv.ps.first().map(|&(fin, slot)| {
                        let rate = sv.cap / sv.copies as f64;
                        (((f64::from_bits(fin) - sv.v) / rate).max(0.0), slot)
                    }),
                    _ => sv.in_service.map(|slot| ((sv.remaining / sv.cap).max(0.0), slot)),
                };
                if let Some((dt, slot)) = next {
                    if self.now + dt < best.0 {
                        best = (self.now + dt, Event::Copy { server, slot });
                    }
                }
            }
        }
        for (server, sv) in self.servers.iter().enumerate() {
            if sv.next_ring < best.0 {
                best = (sv.next_ring, Event::Ring { server });
            }
        }
        best
    }

    /// Moves service forward to time `t`; no event may fall in between.
    pub fn advance(&mut self, t: f64) {
        let dt = t - self.now;
        if dt > 0.0 {
            if self.variant == Variant::LowerBound {
                for ty in 0..self.clocks.len() {
                    if !self.clocks[ty].set.is_empty() {
                        let rate = self.type_rate(ty);
                        self.clocks[ty].u += rate * dt;
                    }
                }
            } else {
                for sv in &mut self.servers {
                    if sv.copies == 0 {
                        continue;
                    }
                    match self.scheduling {
                        Scheduling::Ps => sv.v += sv.cap / sv.copies as f64 * dt,
                        _ => {
                            if sv.in_service.is_some() {
                                sv.remaining -= sv.cap * dt;
                            }
                        }
                    }
                }
            }
        }
        self.now = self.now.max(t);
    }

    /// Processes `ev` at the current time.
    pub fn fire(&mut self, ev: Event) {
        self.events += 1;
        match ev {
            Event::Arrival => {
                let u: f64 = self.rng_arrival.random();
                let ty = self.cum_p.partition_point(|&c| c <= u).min(self.cum_p.len() - 1);
                let size = self.service.sample(&mut self.rng_arrival);
                self.next_arrival = self.now + sample_exp1(&mut self.rng_arrival) / self.lambda;
                if self.admitted[ty] {
                    self.place(ty, size);
                }
            }
            Event::Copy { server, slot } => match self.variant {
                Variant::UpperBound => self.finish_copy(server, slot),
                _ => self.depart(slot),
            },
            Event::Type { slot, .. } => self.depart(slot),
            Event::Ring { server } => {
                let m = self.modulation.as_ref().expect("ring without modulation");
                let slow = m.sample_slowdown(&mut self.rng_mod);
                let eps = m.epsilon;
                let sv = &mut self.servers[server];
                sv.cap = sv.base / slow;
                sv.next_ring = self.now + eps * sample_exp1(&mut self.rng_mod);
            }
        }
    }

    /// Advances to the next event and processes it.
    pub fn step(&mut self) -> Option<(f64, Event)> {
        let (t, ev) = self.peek();
        if !t.is_finite() {
            return None;
        }
        self.advance(t);
        self.fire(ev);
        Some((t, ev))
    }

    fn choose_servers(&mut self, ty: usize) -> Vec<usize> {
        let set = &self.type_servers[ty];
        match self.dispatch {
            Dispatch::Redundancy => set.clone(),
            Dispatch::Bernoulli => {
                let i = if set.len() > 1 { self.rng_dispatch.random_range(0..set.len()) } else { 0 };
                vec![set[i]]
            }
            Dispatch::Jsq => {
                let least = set.iter().map(|&s| self.copy_counts[s]).min().unwrap();
                let ties: Vec<usize> = set.iter().copied().filter(|&s| self.copy_counts[s] == least).collect();
                let i = if ties.len() > 1 { self.rng_dispatch.random_range(0..ties.len()) } else { 0 };
                vec![ties[i]]
            }
        }
    }

    fn place(&mut self, ty: usize, size: f64) {
        let servers = self.choose_servers(ty);
        let slot = self.free.pop().unwrap_or_else(|| {
            self.jobs.push(None);
            self.jobs.len() - 1
        });
        self.seq += 1;
        let mut job = Job { ty, size, arrival: self.now, seq: self.seq, type_start: 0.0, copies: Vec::with_capacity(servers.len()) };
        if self.variant == Variant::LowerBound {
            let clock = &mut self.clocks[ty];
            job.type_start = clock.u;
            clock.set.insert((key(clock.u + size), slot));
        }
        for s in servers {
            job.copies.push(CopyState { server: s, key: 0, start: 0.0, pos: 0, done: false });
            self.copy_counts[s] += 1;
            self.servers[s].copies += 1;
        }
        self.jobs[slot] = Some(job);
        self.alive += 1;
        self.per_type[ty] += 1;
        if self.variant != Variant::LowerBound {
            let n = self.jobs[slot].as_ref().unwrap().copies.len();
            for i in 0..n {
                self.enqueue(slot, i);
            }
        }
    }

    fn enqueue(&mut self, slot: usize, idx: usize) {
        let job = self.jobs[slot].as_ref().unwrap();
        let (size, seq, s) = (job.size, job.seq, job.copies[idx].server);
        let sv = &mut self.servers[s];
        let copy = &mut self.jobs[slot].as_mut().unwrap().copies[idx];
        match self.scheduling {
            Scheduling::Ps => {
                copy.start = sv.v;
                copy.key = key(sv.v + size);
                sv.ps.insert((copy.key, slot));
            }
            Scheduling::Fcfs | Scheduling::Ros => {
                copy.key = seq;
                if sv.in_service.is_none() {
                    sv.in_service = Some(slot);
                    sv.remaining = size;
                } else if self.scheduling == Scheduling::Fcfs {
                    sv.fifo.insert((seq, slot));
                } else {
                    copy.pos = sv.ros.len();
                    sv.ros.push(slot);
                }
            }
        }
    }

    fn start_next(&mut self, s: usize) {
        let next = match self.scheduling {
            Scheduling::Fcfs => self.servers[s].fifo.pop_first().map(|(_, slot)| slot),
            Scheduling::Ros => {
                let len = self.servers[s].ros.len();
                if len == 0 {
                    None
                } else {
                    let i = self.rng_ros.random_range(0..len);
                    let slot = self.servers[s].ros.swap_remove(i);
                    if i < len - 1 {
                        let moved = self.servers[s].ros[i];
                        let job = self.jobs[moved].as_mut().unwrap();
                        job.copies.iter_mut().find(|c| c.server == s).unwrap().pos = i;
                    }
                    Some(slot)
                }
            }
            Scheduling::Ps => unreachable!(),
        };
        let sv = &mut self.servers[s];
        sv.in_service = next;
        sv.remaining = next.map_or(0.0, |slot| self.jobs[slot].as_ref().unwrap().size);
    }

    /// Removes one copy of the job in `slot` from its server.
    fn remove_copy(&mut self, slot: usize, copy: &CopyState) {
        let s = copy.server;
        match self.scheduling {
            Scheduling::Ps => {
                self.servers[s].ps.remove(&(copy.key, slot));
            }
            Scheduling::Fcfs | Scheduling::Ros => {
                if self.servers[s].in_service == Some(slot) {
                    self.start_next(s);
                } else if self.scheduling == Scheduling::Fcfs {
                    self.servers[s].fifo.remove(&(copy.key, slot));
                } else {
                    let sv = &mut self.servers[s];
                    let i = copy.pos;
                    sv.ros.swap_remove(i);
                    if i < sv.ros.len() {
                        let moved = sv.ros[i];
                        let job = self.jobs[moved].as_mut().unwrap();
                        job.copies.iter_mut().find(|c| c.server == s).unwrap().pos = i;
                    }
                }
            }
        }
        self.drop_copy_count(s);
    }

    fn drop_copy_count(&mut self, s: usize) {
        let sv = &mut self.servers[s];
        sv.copies -= 1;
        self.copy_counts[s] -= 1;
        if sv.copies == 0 {
            sv.v = 0.0;
        }
    }

    fn depart(&mut self, slot: usize) {
        let job = self.jobs[slot].take().expect("departing job exists");
        if self.variant == Variant::LowerBound {
            let clock = &mut self.clocks[job.ty];
            clock.set.remove(&(key(job.type_start + job.size), slot));
            if clock.set.is_empty() {
                clock.u = 0.0;
            }
            for c in &job.copies {
                self.drop_copy_count(c.server);
            }
        } else {
            for c in job.copies.iter().filter(|c| !c.done) {
                self.remove_copy(slot, c);
            }
        }
        self.free.push(slot);
        self.alive -= 1;
        self.per_type[job.ty] -= 1;
        self.departures += 1;
    }

    /// Upper bound: a copy completes; the job leaves once every copy in
    /// `R(c)` is done.
    fn finish_copy(&mut self, server: usize, slot: usize) {
        let job = self.jobs[slot].as_mut().unwrap();
        let idx = job.copies.iter().position(|c| c.server == server).unwrap();
        job.copies[idx].done = true;
        let copy = job.copies[idx].clone();
        let ty = job.ty;
        let finished = self.least_loaded[ty]
            .iter()
            .all(|s| job.copies.iter().any(|c| c.server == *s && c.done));
        self.remove_copy(slot, &copy);
        if finished {
            self.depart(slot);
        }
    }
}
