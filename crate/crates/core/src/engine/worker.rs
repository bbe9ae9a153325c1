use super::optimizer::OptimizerState;
use super::run::{
    ChannelSync, ControllerOutcome, DivergenceCause, DivergenceEvent, RankTrace, StepRow, StepTrace, SyncRecord,
};
use super::{config::Plan, EngineError, RunConfig};
use crate::collectives::{RankProgram, Reply, Request, Yield};
use crate::objectives::{sample_batch, ObjectiveError, ParamGroupSet};
use crate::schedule::{
    one_cycle_lr, reassign, shifted_mean, softmax_weights, hypergradient_delta, velocity_update, ChannelKind,
    HyperparamChannel, Signal,
};
use crate::seed::{self, Stream};

pub(crate) const GRADIENT: &str = "gradient";
pub(crate) const PARAMETERS: &str = "parameters";
pub(crate) const OPTIMIZER_STATE: &str = "optimizer_state";
pub(crate) const LOSS: &str = "loss";
pub(crate) const CHANNEL: &str = "channel";

/// Read-only context shared by every rank.
pub(crate) struct Shared<'a> {
    pub cfg: &'a RunConfig,
    pub plan: &'a Plan,
    pub trace: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Start,
    AwaitGradient,
    AwaitParams,
    AwaitOptState,
    AwaitLosses,
    AwaitChannel(usize),
    Done,
}

/// One rank's training loop as a resumable state machine.
pub(crate) struct Worker<'a> {
    rank: usize,
    sh: &'a Shared<'a>,
    pub params: ParamGroupSet,
    opt: OptimizerState,
    /// Replicated on every rank; controller updates are computed
    /// identically everywhere from gathered data.
    channels: Vec<HyperparamChannel>,
    phase: Phase,
    step: u64,
    syncs: u64,
    loss_acc: f64,
    loss: f64,
    values: Vec<f64>,
    rank_losses: Vec<f64>,
    gathered: Vec<Vec<f64>>,
    pub rows: Vec<StepRow>,
    pub sync_records: Vec<SyncRecord>,
    pub divergence: Option<DivergenceEvent>,
    pub trace: Option<RankTrace>,
}

impl<'a> Worker<'a> {
    pub fn new(rank: usize, sh: &'a Shared<'a>, params: ParamGroupSet) -> Self {
        let trace = sh.trace.then(|| RankTrace { initial: params.as_slice().to_vec(), steps: Vec::new() });
        Self {
            rank,
            sh,
            opt: OptimizerState::new(&sh.cfg.optimizer, params.total_dim()),
            params,
            channels: sh.plan.channels.clone(),
            phase: Phase::Start,
            step: 0,
            syncs: 0,
            loss_acc: 0.0,
            loss: 0.0,
            values: Vec::new(),
            rank_losses: Vec::new(),
            gathered: Vec::new(),
            rows: Vec::with_capacity(sh.cfg.total_steps as usize),
            sync_records: Vec::new(),
            divergence: None,
            trace,
        }
    }

    fn diverge(&mut self, cause: DivergenceCause) {
        if self.divergence.is_none() {
            self.divergence = Some(DivergenceEvent { step: self.step, rank: self.rank, cause });
        }
    }

    /// Per-channel value this rank uses at the current step.
    fn channel_value(&self, c: usize) -> f64 {
        let ch = &self.channels[c];
        if ch.controller.engaged || ch.kind != ChannelKind::LearningRate {
            ch.rank_value(self.rank)
        } else {
            let base = one_cycle_lr(self.step - 1, &self.sh.plan.one_cycle).expect("step within schedule");
            ch.value_with_base(base, self.rank)
        }
    }

    fn begin_step(&mut self) -> Result<Yield, EngineError> {
        self.step += 1;
        if self.step > self.sh.cfg.total_steps {
            self.phase = Phase::Done;
            return Ok(Yield::Finished);
        }
        self.values = (0..self.channels.len()).map(|c| self.channel_value(c)).collect();

        let objective = &self.sh.plan.objective;
        let batch = sample_batch(self.sh.cfg.seed, self.rank, self.step);
        let grad = match objective.loss_and_grad(&self.params, &batch) {
            Ok((loss, grad)) => {
                self.loss = loss;
                if !loss.is_finite() {
                    self.diverge(DivergenceCause::NonFiniteLoss);
                } else if let Err(ObjectiveError::NonFinite { group }) = grad.check_finite() {
                    self.diverge(DivergenceCause::NonFiniteGradient { group });
                }
                grad.into_vec()
            }
            Err(ObjectiveError::NonFinite { group }) => {
                // A rank that has blown up still takes part in every
                // collective; its contribution poisons the shared gradient.
                self.loss = f64::NAN;
                self.diverge(DivergenceCause::NonFiniteParams { group });
                vec![f64::NAN; self.params.total_dim()]
            }
            Err(e) => return Err(e.into()),
        };
        self.phase = Phase::AwaitGradient;
        Ok(Yield::Collective(Request::ReduceMean { label: GRADIENT, data: grad }))
    }

    fn apply_gradient(&mut self, shared: Vec<f64>) -> Result<Yield, EngineError> {
        let plan = self.sh.plan;
        let lrs: Vec<f64> = plan.lr_channel.iter().map(|&c| self.values[c]).collect();
        let wds: Vec<f64> = plan.wd_channel.iter().map(|c| c.map_or(0.0, |c| self.values[c])).collect();
        self.opt.apply(&self.sh.cfg.optimizer, &mut self.params, &shared, &lrs, &wds);
        if let Some(t) = &mut self.trace {
            t.steps.push(StepTrace {
                step: self.step,
                shared_grad: shared,
                group_lrs: lrs,
                after_update: self.params.as_slice().to_vec(),
                after_sync: None,
            });
        }
        self.loss_acc += self.loss;
        self.rows.push(StepRow { step: self.step, rank: self.rank, loss: self.loss, values: self.values.clone() });

        if self.step % self.sh.cfg.sync_interval != 0 {
            return self.begin_step();
        }
        self.syncs += 1;
        if self.sh.cfg.averaging {
            self.phase = Phase::AwaitParams;
            let data = self.params.as_slice().to_vec();
            return Ok(Yield::Collective(Request::ReduceMean { label: PARAMETERS, data }));
        }
        self.controller_entry()
    }

    fn controller_entry(&mut self) -> Result<Yield, EngineError> {
        let cfg = self.sh.cfg;
        let rank_loss = self.loss_acc / cfg.sync_interval as f64;
        self.loss_acc = 0.0;
        if cfg.auto_lr.enabled && self.step >= self.sh.plan.warmup_steps {
            self.phase = Phase::AwaitLosses;
            return Ok(Yield::Collective(Request::Gather { label: LOSS, value: rank_loss }));
        }
        self.begin_step()
    }

    fn run_controller(&mut self) {
        let cfg = &self.sh.cfg.auto_lr;
        let scores = softmax_weights(&self.rank_losses, cfg.sigma).ok();
        let outcome = if scores.is_some() { ControllerOutcome::Ran } else { ControllerOutcome::Skipped };
        let mut channels = Vec::with_capacity(self.channels.len());
        for (c, values) in std::mem::take(&mut self.gathered).into_iter().enumerate() {
            let ch = &mut self.channels[c];
            let mut state = ch.controller;
            state.base = shifted_mean(&values);
            state.engaged = true;
            let (weighted, delta, next) = match &scores {
                Some(s) => {
                    let h = hypergradient_delta(&s.weights, &values);
                    let delta = if cfg.signal == Signal::Zero { 0.0 } else { h.delta };
                    (h.weighted, delta, velocity_update(&state, delta, cfg.beta, cfg.lambda, cfg.floor))
                }
                None => {
                    let mut next = state;
                    next.base = (state.base * (1.0 - state.gamma)).max(cfg.floor);
                    (f64::NAN, f64::NAN, next)
                }
            };
            ch.controller = next;
            let mut rng = seed::rng(self.sh.cfg.seed, Stream::Permutation, &[self.syncs, c as u64]);
            let assigned = reassign(ch, &mut rng);
            channels.push(ChannelSync {
                name: ch.name.clone(),
                mean: state.base,
                rank_values: values,
                weighted,
                delta,
                velocity: next.velocity,
                base: next.base,
                gamma: next.gamma,
                assigned,
            });
        }
        if self.rank == 0 {
            let (mean_loss, weights) = match scores {
                Some(s) => (s.mean_loss, s.weights),
                None => (f64::NAN, vec![f64::NAN; self.rank_losses.len()]),
            };
            self.sync_records.push(SyncRecord {
                step: self.step,
                sync_index: self.syncs,
                outcome,
                rank_losses: std::mem::take(&mut self.rank_losses),
                mean_loss,
                weights,
                channels,
            });
        }
    }
}

fn unwrap_reduced(reply: Option<Reply>) -> Vec<f64> {
    match reply {
        Some(Reply::Reduced(v)) => v,
        other => panic!("expected a reduced vector, got {other:?}"),
    }
}

fn unwrap_gathered(reply: Option<Reply>) -> Vec<f64> {
    match reply {
        Some(Reply::Gathered(v)) => v,
        other => panic!("expected a gathered list, got {other:?}"),
    }
}

impl RankProgram for Worker<'_> {
    type Error = EngineError;

    fn resume(&mut self, reply: Option<Reply>) -> Result<Yield, EngineError> {
        match self.phase {
            Phase::Start => self.begin_step(),
            Phase::AwaitGradient => self.apply_gradient(unwrap_reduced(reply)),
            Phase::AwaitParams => {
                let mean = unwrap_reduced(reply);
                self.params.as_mut_slice().copy_from_slice(&mean);
                if let Some(t) = self.trace.as_mut().and_then(|t| t.steps.last_mut()) {
                    t.after_sync = Some(mean);
                }
                if self.sh.cfg.optimizer.average_state && self.opt.has_buffers() {
                    self.phase = Phase::AwaitOptState;
                    let data = self.opt.buffers();
                    return Ok(Yield::Collective(Request::ReduceMean { label: OPTIMIZER_STATE, data }));
                }
                self.controller_entry()
            }
            Phase::AwaitOptState => {
                self.opt.set_buffers(&unwrap_reduced(reply));
                self.controller_entry()
            }
            Phase::AwaitLosses => {
                self.rank_losses = unwrap_gathered(reply);
                self.phase = Phase::AwaitChannel(0);
                Ok(Yield::Collective(Request::Gather { label: CHANNEL, value: self.values[0] }))
            }
            Phase::AwaitChannel(c) => {
                self.gathered.push(unwrap_gathered(reply));
                if c + 1 < self.channels.len() {
                    self.phase = Phase::AwaitChannel(c + 1);
                    return Ok(Yield::Collective(Request::Gather { label: CHANNEL, value: self.values[c + 1] }));
                }
                self.run_controller();
                self.begin_step()
            }
            Phase::Done => Ok(Yield::Finished),
        }
    }
}
