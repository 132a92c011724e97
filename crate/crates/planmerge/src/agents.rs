//! Node and operator agent state machines and the messages between them.
//!
//! Agents never touch each other's state. Everything crosses the boundary as
//! a `ProtocolMessage`, and a node's optimal plan in particular never leaves
//! the node: operators only ever see error-derived scalars. Handlers return
//! the messages they want sent; the engine owns delivery order and timing.
//!
//! A node's life: find an operator through a call-for-proposal round, then
//! repeatedly signal that a plan is needed, evaluate the requested execution
//! against the hidden optimal plan, and report the (noisy) result. An
//! operator's life is reactive: propose to nodes while capacity lasts, answer
//! peer queries honestly, and on each plan request gather recommendations,
//! merge them, and ask the node to execute the result.

use crate::config::{ConfigError, SimConfig};
use crate::merging::{
    merge_method0, merge_method1, merge_method2, merge_method3, Candidate, HistoryEntry,
    MergeMethod,
};
use crate::plan::{plan_error, Plan};
use crate::reputation::{
    next_plan_time, noise_stddev, perceive_result, reputation, update_expertise, ExpertiseRecord,
};
use crate::rng::{draw_index, SimRng};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

pub type AgentId = usize;
pub type ConversationId = u64;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("protocol violation at tick {tick}: {detail}")]
    Protocol { tick: u64, detail: String },
    #[error("simulation stalled: no progress after {0} ticks")]
    Stalled(u64),
}

/// Payload of one message. Senders, receivers, and conversation ids live on
/// the envelope.
#[derive(Debug, Clone, PartialEq)]
pub enum MessageBody {
    CallForProposal { node_type: usize },
    OperatorProposal,
    AcceptProposal,
    RejectProposal,
    PlanNeeded { node_type: usize, node_subtype: usize },
    QueryRecommenders { node_type: usize },
    InformRecommenders { recommenders: Vec<AgentId> },
    QueryExpertise { node_type: usize },
    InformExpertise { expertise: ExpertiseRecord },
    QueryRecommendation { node_type: usize },
    /// `None` when the sender has no history for the queried type; the asker
    /// drops such answers from its candidate set.
    InformRecommendation { plan: Option<Plan> },
    RequestExecution { plan: Plan, expertise: ExpertiseRecord },
    InformExecutionResult { perceived_result: f64, next_time: f64, noise_stddev: f64 },
}

impl MessageBody {
    pub fn variant_name(&self) -> &'static str {
        match self {
            MessageBody::CallForProposal { .. } => "CallForProposal",
            MessageBody::OperatorProposal => "OperatorProposal",
            MessageBody::AcceptProposal => "AcceptProposal",
            MessageBody::RejectProposal => "RejectProposal",
            MessageBody::PlanNeeded { .. } => "PlanNeeded",
            MessageBody::QueryRecommenders { .. } => "QueryRecommenders",
            MessageBody::InformRecommenders { .. } => "InformRecommenders",
            MessageBody::QueryExpertise { .. } => "QueryExpertise",
            MessageBody::InformExpertise { .. } => "InformExpertise",
            MessageBody::QueryRecommendation { .. } => "QueryRecommendation",
            MessageBody::InformRecommendation { .. } => "InformRecommendation",
            MessageBody::RequestExecution { .. } => "RequestExecution",
            MessageBody::InformExecutionResult { .. } => "InformExecutionResult",
        }
    }
}

/// A routed message. Replies carry the conversation id of the message that
/// opened the exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolMessage {
    pub sender: AgentId,
    pub receiver: AgentId,
    pub conversation_id: ConversationId,
    pub body: MessageBody,
}

/// A handler's request to send a message. The engine stamps the sender and
/// the delivery tick.
#[derive(Debug, Clone)]
pub struct Emit {
    pub receiver: AgentId,
    pub conversation_id: ConversationId,
    pub body: MessageBody,
}

/// Per-call handler context: the current tick and the conversation counter.
#[derive(Debug)]
pub struct Ctx {
    pub now: u64,
    pub next_conversation: ConversationId,
}

impl Ctx {
    pub fn new_conversation(&mut self) -> ConversationId {
        let id = self.next_conversation;
        self.next_conversation += 1;
        id
    }

    fn violation(&self, detail: impl Into<String>) -> SimError {
        SimError::Protocol { tick: self.now, detail: detail.into() }
    }
}

/// One completed plan execution, as seen by the node that evaluated it. The
/// engine collects these; they are the only source of metrics rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionEvent {
    pub tick: u64,
    pub operator: AgentId,
    pub node: AgentId,
    /// 1-based count of completed rounds on this node, including this one.
    pub iteration: usize,
    pub raw_error: f64,
    pub normalized_error: f64,
    pub perceived_result: f64,
    pub next_time: f64,
}

/// One merge decision, recorded for inspection and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeEvent {
    pub tick: u64,
    pub operator: AgentId,
    pub node: AgentId,
    /// Candidates that entered the merge; 0 means the operator fell back to
    /// its own history.
    pub candidates_used: usize,
    pub plan: Plan,
}

struct CfpRound {
    conversation_id: ConversationId,
    decide_at: u64,
    proposers: Vec<AgentId>,
}

pub struct NodeAgentState {
    pub node_id: AgentId,
    pub node_type: usize,
    pub node_subtype: usize,
    /// Hidden ground truth. Read only inside `evaluate_execution`.
    pub optimal_plan: Plan,
    pub current_operator: Option<AgentId>,
    pub time_until_next_plan: f64,
    /// Completed plan rounds. The node stops asking for plans once this
    /// reaches the configured iteration count.
    pub iterations_done: usize,
    cfp: Option<CfpRound>,
    round_in_flight: bool,
    rng: SimRng,
}

impl NodeAgentState {
    pub fn new(
        node_id: AgentId,
        node_type: usize,
        node_subtype: usize,
        optimal_plan: Plan,
        rng: SimRng,
    ) -> Self {
        Self {
            node_id,
            node_type,
            node_subtype,
            optimal_plan,
            current_operator: None,
            time_until_next_plan: 0.0,
            iterations_done: 0,
            cfp: None,
            round_in_flight: false,
            rng,
        }
    }

    /// True when no call-for-proposal round or plan round is open.
    pub fn is_idle(&self) -> bool {
        self.cfp.is_none() && !self.round_in_flight
    }

    /// Periodic behavior, run once per tick after message delivery: seek an
    /// operator while unassigned, otherwise count down to the next plan
    /// request.
    pub fn tick(&mut self, config: &SimConfig, ctx: &mut Ctx) -> Vec<Emit> {
        if self.current_operator.is_none() {
            return self.seek_operator(config, ctx);
        }
        if self.round_in_flight || self.iterations_done >= config.num_iterations {
            return Vec::new();
        }
        self.time_until_next_plan = (self.time_until_next_plan - 1.0).max(0.0);
        if self.time_until_next_plan > 0.0 {
            return Vec::new();
        }
        self.round_in_flight = true;
        let operator = self.current_operator.expect("assigned");
        vec![Emit {
            receiver: operator,
            conversation_id: ctx.new_conversation(),
            body: MessageBody::PlanNeeded {
                node_type: self.node_type,
                node_subtype: self.node_subtype,
            },
        }]
    }

    fn seek_operator(&mut self, config: &SimConfig, ctx: &mut Ctx) -> Vec<Emit> {
        match &self.cfp {
            None => self.broadcast_cfp(config, ctx),
            Some(round) if ctx.now >= round.decide_at => {
                let round = self.cfp.take().expect("checked");
                if round.proposers.is_empty() {
                    // Nobody had spare capacity; try again.
                    return self.broadcast_cfp(config, ctx);
                }
                let winner = round.proposers[draw_index(&mut self.rng, round.proposers.len())];
                self.current_operator = Some(winner);
                round
                    .proposers
                    .iter()
                    .map(|&op| Emit {
                        receiver: op,
                        conversation_id: round.conversation_id,
                        body: if op == winner {
                            MessageBody::AcceptProposal
                        } else {
                            MessageBody::RejectProposal
                        },
                    })
                    .collect()
            }
            Some(_) => Vec::new(),
        }
    }

    fn broadcast_cfp(&mut self, config: &SimConfig, ctx: &mut Ctx) -> Vec<Emit> {
        let conversation_id = ctx.new_conversation();
        // Proposals emitted next tick arrive the tick after; deciding two
        // ticks out collects them all.
        self.cfp = Some(CfpRound {
            conversation_id,
            decide_at: ctx.now + 2,
            proposers: Vec::new(),
        });
        (0..config.num_operators)
            .map(|op| Emit {
                receiver: op,
                conversation_id,
                body: MessageBody::CallForProposal { node_type: self.node_type },
            })
            .collect()
    }

    pub fn on_message(
        &mut self,
        msg: &ProtocolMessage,
        config: &SimConfig,
        ctx: &mut Ctx,
    ) -> Result<(Vec<Emit>, Option<ExecutionEvent>), SimError> {
        match &msg.body {
            MessageBody::OperatorProposal => {
                let round = self.cfp.as_mut().ok_or_else(|| {
                    ctx.violation(format!(
                        "node {} got a proposal outside a call-for-proposal round",
                        self.node_id
                    ))
                })?;
                if round.conversation_id != msg.conversation_id {
                    return Err(ctx.violation(format!(
                        "node {} got a proposal for stale conversation {}",
                        self.node_id, msg.conversation_id
                    )));
                }
                round.proposers.push(msg.sender);
                Ok((Vec::new(), None))
            }
            MessageBody::RequestExecution { plan, expertise } => {
                let (emits, event) = self.evaluate_execution(msg, plan, expertise, config, ctx)?;
                Ok((emits, Some(event)))
            }
            other => Err(ctx.violation(format!(
                "node {} cannot handle {}",
                self.node_id,
                other.variant_name()
            ))),
        }
    }

    /// Scores an execution against the hidden optimal plan. The perception is
    /// noisy: the reported result is a normal sample around the true
    /// normalized error whose spread comes from the requesting operator's
    /// self-reported expertise.
    fn evaluate_execution(
        &mut self,
        msg: &ProtocolMessage,
        plan: &Plan,
        expertise: &ExpertiseRecord,
        config: &SimConfig,
        ctx: &mut Ctx,
    ) -> Result<(Vec<Emit>, ExecutionEvent), SimError> {
        if self.current_operator != Some(msg.sender) {
            return Err(ctx.violation(format!(
                "node {} got an execution request from operator {} which does not operate it",
                self.node_id, msg.sender
            )));
        }
        let raw = plan_error(plan, &self.optimal_plan, &config.weights, &config.dims)
            .map_err(|e| ctx.violation(format!("node {} refused execution: {e}", self.node_id)))?;
        let norm = raw / (config.dims.num_timesteps as f64 * config.weights.total());
        let stddev = noise_stddev(expertise, norm)
            .map_err(|e| ctx.violation(format!("node {} refused execution: {e}", self.node_id)))?;
        let perceived = if config.no_noise {
            norm
        } else {
            perceive_result(norm, stddev, &mut self.rng)
        };
        let time = next_plan_time(perceived, &config.rep_params);
        self.time_until_next_plan = time;
        self.iterations_done += 1;
        self.round_in_flight = false;
        let event = ExecutionEvent {
            tick: ctx.now,
            operator: msg.sender,
            node: self.node_id,
            iteration: self.iterations_done,
            raw_error: raw,
            normalized_error: norm,
            perceived_result: perceived,
            next_time: time,
        };
        let reply = Emit {
            receiver: msg.sender,
            conversation_id: msg.conversation_id,
            body: MessageBody::InformExecutionResult {
                perceived_result: perceived,
                next_time: time,
                noise_stddev: stddev,
            },
        };
        Ok((vec![reply], event))
    }
}

/// Directory entry for one recommender: the latest expertise snapshot and the
/// plan it last recommended. Both are refreshed every plan round.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectoryEntry {
    pub agent: AgentId,
    pub expertise: ExpertiseRecord,
    pub last_plan: Option<Plan>,
}

enum Phase {
    /// Waiting for roster answers from every peer.
    Discover { pending: BTreeSet<ConversationId>, found: BTreeSet<AgentId> },
    /// Waiting for expertise and recommendation answers from the directory.
    Query {
        pending_expertise: BTreeMap<ConversationId, AgentId>,
        pending_recommendation: BTreeMap<ConversationId, AgentId>,
    },
    /// Waiting for the node to report the execution result.
    Execute { conversation_id: ConversationId, plan: Plan },
}

struct PlanRound {
    node: AgentId,
    node_type: usize,
    phase: Phase,
}

pub struct OperatorAgentState {
    pub operator_id: AgentId,
    pub availability: usize,
    pub specialty_type: usize,
    pub operated_nodes: BTreeSet<AgentId>,
    pub expertise_by_type: BTreeMap<usize, ExpertiseRecord>,
    pub plan_history_by_type: BTreeMap<usize, Vec<HistoryEntry>>,
    pub recommender_directory: BTreeMap<usize, Vec<DirectoryEntry>>,
    /// Proposals sent but not yet accepted or rejected; they hold capacity so
    /// the operator never over-commits.
    reserved_slots: usize,
    rounds: Vec<PlanRound>,
}

impl OperatorAgentState {
    pub fn new(operator_id: AgentId, availability: usize, specialty_type: usize) -> Self {
        Self {
            operator_id,
            availability,
            specialty_type,
            operated_nodes: BTreeSet::new(),
            expertise_by_type: BTreeMap::new(),
            plan_history_by_type: BTreeMap::new(),
            recommender_directory: BTreeMap::new(),
            reserved_slots: 0,
            rounds: Vec::new(),
        }
    }

    pub fn has_open_rounds(&self) -> bool {
        !self.rounds.is_empty()
    }

    pub fn reserved_slots(&self) -> usize {
        self.reserved_slots
    }

    fn expertise_for(&self, node_type: usize) -> ExpertiseRecord {
        self.expertise_by_type
            .get(&node_type)
            .copied()
            .unwrap_or_else(ExpertiseRecord::initial)
    }

    fn best_own_plan(&self, node_type: usize) -> Option<Plan> {
        self.plan_history_by_type
            .get(&node_type)
            .and_then(|h| merge_method0(h).ok())
    }

    pub fn on_message(
        &mut self,
        msg: &ProtocolMessage,
        config: &SimConfig,
        roster: &[usize],
        ctx: &mut Ctx,
    ) -> Result<(Vec<Emit>, Option<MergeEvent>), SimError> {
        match &msg.body {
            MessageBody::CallForProposal { .. } => {
                if self.operated_nodes.len() + self.reserved_slots < self.availability {
                    self.reserved_slots += 1;
                    Ok((
                        vec![Emit {
                            receiver: msg.sender,
                            conversation_id: msg.conversation_id,
                            body: MessageBody::OperatorProposal,
                        }],
                        None,
                    ))
                } else {
                    Ok((Vec::new(), None))
                }
            }
            MessageBody::AcceptProposal => {
                self.release_reservation(ctx)?;
                self.operated_nodes.insert(msg.sender);
                if self.operated_nodes.len() > self.availability {
                    return Err(ctx.violation(format!(
                        "operator {} exceeded availability {}",
                        self.operator_id, self.availability
                    )));
                }
                Ok((Vec::new(), None))
            }
            MessageBody::RejectProposal => {
                self.release_reservation(ctx)?;
                Ok((Vec::new(), None))
            }
            MessageBody::PlanNeeded { node_type, .. } => {
                self.start_round(msg.sender, *node_type, config, ctx)
            }
            MessageBody::QueryRecommenders { node_type } => {
                // Specialties are public knowledge; own history is private
                // and may qualify this operator too. The asker is never a
                // recommender to itself.
                let mut ids: Vec<AgentId> = roster
                    .iter()
                    .enumerate()
                    .filter(|&(id, &specialty)| id != msg.sender && specialty == *node_type)
                    .map(|(id, _)| id)
                    .collect();
                let covers_own = self
                    .plan_history_by_type
                    .get(node_type)
                    .is_some_and(|h| !h.is_empty());
                if covers_own && self.operator_id != msg.sender {
                    ids.push(self.operator_id);
                }
                ids.sort_unstable();
                ids.dedup();
                Ok((
                    vec![Emit {
                        receiver: msg.sender,
                        conversation_id: msg.conversation_id,
                        body: MessageBody::InformRecommenders { recommenders: ids },
                    }],
                    None,
                ))
            }
            MessageBody::QueryExpertise { node_type } => Ok((
                vec![Emit {
                    receiver: msg.sender,
                    conversation_id: msg.conversation_id,
                    // Honest reporting: the stored record, bit for bit.
                    body: MessageBody::InformExpertise { expertise: self.expertise_for(*node_type) },
                }],
                None,
            )),
            MessageBody::QueryRecommendation { node_type } => Ok((
                vec![Emit {
                    receiver: msg.sender,
                    conversation_id: msg.conversation_id,
                    body: MessageBody::InformRecommendation { plan: self.best_own_plan(*node_type) },
                }],
                None,
            )),
            MessageBody::InformRecommenders { recommenders } => {
                self.on_recommenders(msg, recommenders, config, ctx)
            }
            MessageBody::InformExpertise { expertise } => {
                self.on_query_answer(msg, QueryAnswer::Expertise(*expertise), config, ctx)
            }
            MessageBody::InformRecommendation { plan } => {
                self.on_query_answer(msg, QueryAnswer::Recommendation(plan.clone()), config, ctx)
            }
            MessageBody::InformExecutionResult { perceived_result, noise_stddev, .. } => {
                self.on_execution_result(msg, *perceived_result, *noise_stddev, config, ctx)?;
                Ok((Vec::new(), None))
            }
            other => Err(ctx.violation(format!(
                "operator {} cannot handle {}",
                self.operator_id,
                other.variant_name()
            ))),
        }
    }

    fn release_reservation(&mut self, ctx: &Ctx) -> Result<(), SimError> {
        if self.reserved_slots == 0 {
            return Err(ctx.violation(format!(
                "operator {} got a proposal answer with no reservation outstanding",
                self.operator_id
            )));
        }
        self.reserved_slots -= 1;
        Ok(())
    }

    /// A node asked for a plan. Method 0 merges straight from own history;
    /// the other methods first discover recommenders (once per type), then
    /// refresh their expertise and recommendations.
    fn start_round(
        &mut self,
        node: AgentId,
        node_type: usize,
        config: &SimConfig,
        ctx: &mut Ctx,
    ) -> Result<(Vec<Emit>, Option<MergeEvent>), SimError> {
        if !self.operated_nodes.contains(&node) {
            return Err(ctx.violation(format!(
                "operator {} got a plan request from node {} which it does not operate",
                self.operator_id, node
            )));
        }
        if self.rounds.iter().any(|r| r.node == node) {
            return Err(ctx.violation(format!(
                "operator {} got a plan request from node {} with a round already open",
                self.operator_id, node
            )));
        }
        let mut round = PlanRound { node, node_type, phase: Phase::empty_discover() };
        if config.merge_method == MergeMethod::OwnHistoryBest {
            let (emits, event) = self.merge_and_request(&mut round, config, ctx)?;
            self.rounds.push(round);
            return Ok((emits, Some(event)));
        }
        if self.recommender_directory.contains_key(&node_type) {
            let result = self.enter_query_phase(&mut round, config, ctx)?;
            self.rounds.push(round);
            return Ok(result);
        }
        let mut pending = BTreeSet::new();
        let mut emits = Vec::new();
        for peer in 0..config.num_operators {
            if peer == self.operator_id {
                continue;
            }
            let conversation_id = ctx.new_conversation();
            pending.insert(conversation_id);
            emits.push(Emit {
                receiver: peer,
                conversation_id,
                body: MessageBody::QueryRecommenders { node_type },
            });
        }
        if emits.is_empty() {
            // No peers to ask; the directory for this type is known empty.
            self.recommender_directory.insert(node_type, Vec::new());
            let result = self.enter_query_phase(&mut round, config, ctx)?;
            self.rounds.push(round);
            return Ok(result);
        }
        round.phase = Phase::Discover { pending, found: BTreeSet::new() };
        self.rounds.push(round);
        Ok((emits, None))
    }

    fn on_recommenders(
        &mut self,
        msg: &ProtocolMessage,
        recommenders: &[AgentId],
        config: &SimConfig,
        ctx: &mut Ctx,
    ) -> Result<(Vec<Emit>, Option<MergeEvent>), SimError> {
        let own_id = self.operator_id;
        let mut target = None;
        for (i, round) in self.rounds.iter_mut().enumerate() {
            if let Phase::Discover { pending, found } = &mut round.phase {
                if pending.remove(&msg.conversation_id) {
                    found.extend(recommenders.iter().filter(|&&id| id != own_id));
                    target = Some((i, pending.is_empty()));
                    break;
                }
            }
        }
        let Some((i, complete)) = target else {
            return Err(ctx.violation(format!(
                "operator {own_id} got a roster answer for unknown conversation {}",
                msg.conversation_id
            )));
        };
        if !complete {
            return Ok((Vec::new(), None));
        }
        let mut round = self.rounds.remove(i);
        let Phase::Discover { found, .. } = &round.phase else { unreachable!() };
        // BTreeSet iteration is ascending, so the cap keeps the lowest ids.
        let ids: Vec<AgentId> = found.iter().copied().take(config.max_recommenders).collect();
        self.recommender_directory.insert(
            round.node_type,
            ids.into_iter()
                .map(|agent| DirectoryEntry {
                    agent,
                    expertise: ExpertiseRecord::initial(),
                    last_plan: None,
                })
                .collect(),
        );
        let result = self.enter_query_phase(&mut round, config, ctx)?;
        self.rounds.push(round);
        Ok(result)
    }

    /// Queries each directory entry for fresh expertise and a current
    /// recommendation. With an empty directory the merge happens at once.
    fn enter_query_phase(
        &self,
        round: &mut PlanRound,
        config: &SimConfig,
        ctx: &mut Ctx,
    ) -> Result<(Vec<Emit>, Option<MergeEvent>), SimError> {
        let entries = &self.recommender_directory[&round.node_type];
        if entries.is_empty() {
            let (emits, event) = self.merge_and_request(round, config, ctx)?;
            return Ok((emits, Some(event)));
        }
        let mut pending_expertise = BTreeMap::new();
        let mut pending_recommendation = BTreeMap::new();
        let mut emits = Vec::new();
        for entry in entries {
            let c1 = ctx.new_conversation();
            pending_expertise.insert(c1, entry.agent);
            emits.push(Emit {
                receiver: entry.agent,
                conversation_id: c1,
                body: MessageBody::QueryExpertise { node_type: round.node_type },
            });
            let c2 = ctx.new_conversation();
            pending_recommendation.insert(c2, entry.agent);
            emits.push(Emit {
                receiver: entry.agent,
                conversation_id: c2,
                body: MessageBody::QueryRecommendation { node_type: round.node_type },
            });
        }
        round.phase = Phase::Query { pending_expertise, pending_recommendation };
        Ok((emits, None))
    }

    fn on_query_answer(
        &mut self,
        msg: &ProtocolMessage,
        answer: QueryAnswer,
        config: &SimConfig,
        ctx: &mut Ctx,
    ) -> Result<(Vec<Emit>, Option<MergeEvent>), SimError> {
        let mut target = None;
        for (i, round) in self.rounds.iter_mut().enumerate() {
            let Phase::Query { pending_expertise, pending_recommendation } = &mut round.phase
            else {
                continue;
            };
            let removed = match answer {
                QueryAnswer::Expertise(_) => pending_expertise.remove(&msg.conversation_id),
                QueryAnswer::Recommendation(_) => {
                    pending_recommendation.remove(&msg.conversation_id)
                }
            };
            if let Some(agent) = removed {
                let complete = pending_expertise.is_empty() && pending_recommendation.is_empty();
                target = Some((i, round.node_type, agent, complete));
                break;
            }
        }
        let Some((i, node_type, agent, complete)) = target else {
            return Err(ctx.violation(format!(
                "operator {} got an unexpected {} (conversation {})",
                self.operator_id,
                msg.body.variant_name(),
                msg.conversation_id
            )));
        };
        if agent != msg.sender {
            return Err(ctx.violation(format!(
                "operator {}: conversation {} belongs to agent {} and was answered by {}",
                self.operator_id, msg.conversation_id, agent, msg.sender
            )));
        }
        let entry = self
            .recommender_directory
            .get_mut(&node_type)
            .and_then(|v| v.iter_mut().find(|e| e.agent == msg.sender))
            .expect("queried agents are in the directory");
        match answer {
            QueryAnswer::Expertise(record) => entry.expertise = record,
            QueryAnswer::Recommendation(plan) => entry.last_plan = plan,
        }
        if !complete {
            return Ok((Vec::new(), None));
        }
        let mut round = self.rounds.remove(i);
        let (emits, event) = self.merge_and_request(&mut round, config, ctx)?;
        self.rounds.push(round);
        Ok((emits, Some(event)))
    }

    /// Builds the candidate set, runs the configured merge method, and asks
    /// the node to execute the result. Degenerate candidate sets fall back:
    /// no candidates at all means method-0 behavior on own history, and the
    /// replacement method with a single candidate adopts that plan.
    fn merge_and_request(
        &self,
        round: &mut PlanRound,
        config: &SimConfig,
        ctx: &mut Ctx,
    ) -> Result<(Vec<Emit>, MergeEvent), SimError> {
        let node_type = round.node_type;
        let history = self.plan_history_by_type.get(&node_type).map_or(&[][..], |h| &h[..]);
        let mut candidates: Vec<Candidate> = Vec::new();
        if config.merge_method != MergeMethod::OwnHistoryBest {
            if let Some(entries) = self.recommender_directory.get(&node_type) {
                for entry in entries {
                    let Some(plan) = &entry.last_plan else { continue };
                    candidates.push(Candidate {
                        source_id: entry.agent,
                        plan: plan.clone(),
                        reputation: reputation(&entry.expertise, &config.rep_params),
                        is_own: false,
                    });
                }
            }
            if config.include_own_plan {
                if let Some(plan) = self.best_own_plan(node_type) {
                    candidates.push(Candidate {
                        source_id: self.operator_id,
                        plan,
                        reputation: reputation(&self.expertise_for(node_type), &config.rep_params),
                        is_own: true,
                    });
                }
            }
        }
        let merged = if config.merge_method == MergeMethod::OwnHistoryBest
            || candidates.is_empty()
        {
            merge_method0(history)
        } else {
            match config.merge_method {
                MergeMethod::ReputationBest => merge_method1(&candidates),
                MergeMethod::StepVote => merge_method2(&candidates),
                MergeMethod::BestWithReplacements => {
                    if candidates.len() == 1 {
                        Ok(candidates[0].plan.clone())
                    } else {
                        merge_method3(&candidates, config.num_replacements)
                    }
                }
                MergeMethod::OwnHistoryBest => unreachable!(),
            }
        };
        let plan = merged.map_err(|e| {
            ctx.violation(format!(
                "operator {} has nothing to merge for node {}: {e}",
                self.operator_id, round.node
            ))
        })?;
        let conversation_id = ctx.new_conversation();
        let event = MergeEvent {
            tick: ctx.now,
            operator: self.operator_id,
            node: round.node,
            candidates_used: candidates.len(),
            plan: plan.clone(),
        };
        let emit = Emit {
            receiver: round.node,
            conversation_id,
            body: MessageBody::RequestExecution {
                plan: plan.clone(),
                expertise: self.expertise_for(node_type),
            },
        };
        round.phase = Phase::Execute { conversation_id, plan };
        Ok((vec![emit], event))
    }

    /// Closes a plan round: rebuild local expertise from the noise level the
    /// node reported, advance the experience counter, and remember the plan
    /// with its observed success. History keeps distinct plans, most recent
    /// last; re-executing a known plan refreshes its success with the newer
    /// (and, as expertise grows, sharper) observation instead of adding a
    /// duplicate.
    fn on_execution_result(
        &mut self,
        msg: &ProtocolMessage,
        perceived_result: f64,
        stddev: f64,
        config: &SimConfig,
        ctx: &mut Ctx,
    ) -> Result<(), SimError> {
        let position = self.rounds.iter().position(|r| {
            matches!(&r.phase, Phase::Execute { conversation_id, .. }
                if *conversation_id == msg.conversation_id)
        });
        let Some(position) = position else {
            return Err(ctx.violation(format!(
                "operator {} got an execution result for unknown conversation {}",
                self.operator_id, msg.conversation_id
            )));
        };
        let round = self.rounds.remove(position);
        let Phase::Execute { plan, .. } = round.phase else { unreachable!() };
        let old = self.expertise_for(round.node_type);
        self.expertise_by_type
            .insert(round.node_type, update_expertise(&old, stddev, &config.rep_params));
        let history = self.plan_history_by_type.entry(round.node_type).or_default();
        if let Some(existing) = history.iter().position(|e| e.plan == plan) {
            history.remove(existing);
        }
        history.push(HistoryEntry { plan, observed_success: 1.0 - perceived_result });
        if history.len() > config.history_depth {
            history.remove(0);
        }
        Ok(())
    }
}

enum QueryAnswer {
    Expertise(ExpertiseRecord),
    Recommendation(Option<Plan>),
}

impl Phase {
    fn empty_discover() -> Self {
        Phase::Discover { pending: BTreeSet::new(), found: BTreeSet::new() }
    }
}
