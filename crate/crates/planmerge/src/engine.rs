//! The tick engine: owns the agents, the message queue, and time.
//!
//! Each tick has two phases. Delivery hands every message emitted last tick
//! to its receiver, in ascending sender order (ties broken by emission
//! order), so delivery order never depends on container internals. The node
//! phase then runs every node's periodic behavior in id order. Messages
//! emitted at tick T arrive at T+1. The engine also polices conversation
//! discipline for the query and execution exchanges: exactly one reply per
//! request, from the agent that was asked.

use crate::agents::{
    AgentId, ConversationId, Ctx, Emit, ExecutionEvent, MergeEvent, MessageBody,
    NodeAgentState, OperatorAgentState, ProtocolMessage, SimError,
};
use crate::config::SimConfig;
use std::collections::BTreeMap;

/// How much the engine narrates. `Protocol` prints one line per delivered
/// message; `Debug` adds termination reasoning and appends the recommended
/// plan to recommendation answers, which makes first-round candidate sets
/// comparable across log captures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd)]
pub enum LogLevel {
    Off,
    Protocol,
    Debug,
}

impl LogLevel {
    /// Reads the `PLANMERGE_LOG` environment variable; unknown values and
    /// absence both mean off.
    pub fn from_env() -> Self {
        match std::env::var("PLANMERGE_LOG").as_deref() {
            Ok("protocol") => LogLevel::Protocol,
            Ok("debug") => LogLevel::Debug,
            _ => LogLevel::Off,
        }
    }
}

/// Message exchanges the engine tracks for the one-reply discipline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct OpenConversation {
    asked: AgentId,
    asker: AgentId,
}

/// Progress watchdog threshold: a run of this many consecutive ticks with no
/// message traffic and no executions means the protocol has wedged.
const STALL_WINDOW: u64 = 1_000;

pub struct Engine {
    pub nodes: Vec<NodeAgentState>,
    pub operators: Vec<OperatorAgentState>,
    /// Operator specialties by id, public knowledge used for roster answers.
    pub specialties: Vec<usize>,
    config: SimConfig,
    now: u64,
    next_conversation: ConversationId,
    /// Messages awaiting delivery next tick, in emission order.
    outbox: Vec<ProtocolMessage>,
    open: BTreeMap<ConversationId, OpenConversation>,
    pub executions: Vec<ExecutionEvent>,
    pub merges: Vec<MergeEvent>,
    log: LogLevel,
    log_lines: Option<Vec<String>>,
}

impl Engine {
    pub fn new(
        config: SimConfig,
        operators: Vec<OperatorAgentState>,
        nodes: Vec<NodeAgentState>,
        specialties: Vec<usize>,
        log: LogLevel,
    ) -> Self {
        Self {
            nodes,
            operators,
            specialties,
            config,
            now: 0,
            next_conversation: 0,
            outbox: Vec::new(),
            open: BTreeMap::new(),
            executions: Vec::new(),
            merges: Vec::new(),
            log,
            log_lines: None,
        }
    }

    /// Diverts protocol log lines into a buffer instead of stdout, for tests
    /// that inspect the traffic.
    pub fn capture_log(&mut self) {
        self.log_lines = Some(Vec::new());
    }

    pub fn captured_log(&self) -> &[String] {
        self.log_lines.as_deref().unwrap_or(&[])
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    fn is_operator(&self, id: AgentId) -> bool {
        id < self.operators.len()
    }

    /// Runs ticks until every node has finished its iterations and the
    /// system is quiet, or the watchdog decides nothing is moving.
    pub fn run(&mut self) -> Result<(), SimError> {
        let mut quiet_ticks: u64 = 0;
        let mut last_potential = self.potential();
        loop {
            self.tick()?;
            if self.finished() {
                if self.log == LogLevel::Debug {
                    self.emit_log(format!("t={} done", self.now));
                }
                return Ok(());
            }
            let potential = self.potential();
            if potential == last_potential {
                quiet_ticks += 1;
            } else {
                quiet_ticks = 0;
                last_potential = potential;
            }
            if quiet_ticks >= STALL_WINDOW {
                return Err(SimError::Stalled(self.now));
            }
        }
    }

    /// Progress fingerprint. Message churn alone (a node rebroadcasting
    /// calls nobody can answer) does not move it; completed work and
    /// countdown movement do.
    fn potential(&self) -> (usize, usize, usize, u64) {
        let executions = self.executions.len();
        let assigned = self.nodes.iter().filter(|n| n.current_operator.is_some()).count();
        let iterations: usize = self.nodes.iter().map(|n| n.iterations_done).sum();
        let countdown: u64 = self
            .nodes
            .iter()
            .filter(|n| n.iterations_done < self.config.num_iterations)
            .map(|n| n.time_until_next_plan.to_bits())
            .fold(0u64, u64::wrapping_add);
        (executions, assigned, iterations, countdown)
    }

    fn finished(&self) -> bool {
        self.outbox.is_empty()
            && self.open.is_empty()
            && self.nodes.iter().all(|n| {
                n.iterations_done >= self.config.num_iterations && n.is_idle()
            })
            && self.operators.iter().all(|o| !o.has_open_rounds())
    }

    /// One tick: deliver last tick's messages, then run the node phase.
    fn tick(&mut self) -> Result<(), SimError> {
        self.now += 1;
        let mut delivery = std::mem::take(&mut self.outbox);
        // Stable by sender: emission order is the tiebreak within a sender.
        delivery.sort_by_key(|m| m.sender);
        for msg in delivery {
            self.deliver(&msg)?;
        }
        for i in 0..self.nodes.len() {
            let mut ctx = self.ctx();
            let emits = self.nodes[i].tick(&self.config, &mut ctx);
            let sender = self.operators.len() + i;
            self.absorb(ctx, sender, emits);
        }
        Ok(())
    }

    fn ctx(&self) -> Ctx {
        Ctx { now: self.now, next_conversation: self.next_conversation }
    }

    fn absorb(&mut self, ctx: Ctx, sender: AgentId, emits: Vec<Emit>) {
        self.next_conversation = ctx.next_conversation;
        for emit in emits {
            self.track(sender, &emit);
            self.outbox.push(ProtocolMessage {
                sender,
                receiver: emit.receiver,
                conversation_id: emit.conversation_id,
                body: emit.body,
            });
        }
    }

    /// Registers requests that demand exactly one reply and retires
    /// conversations when that reply goes out.
    fn track(&mut self, sender: AgentId, emit: &Emit) {
        match &emit.body {
            MessageBody::QueryRecommenders { .. }
            | MessageBody::QueryExpertise { .. }
            | MessageBody::QueryRecommendation { .. }
            | MessageBody::RequestExecution { .. } => {
                self.open.insert(
                    emit.conversation_id,
                    OpenConversation { asked: emit.receiver, asker: sender },
                );
            }
            MessageBody::InformRecommenders { .. }
            | MessageBody::InformExpertise { .. }
            | MessageBody::InformRecommendation { .. }
            | MessageBody::InformExecutionResult { .. } => {
                self.open.remove(&emit.conversation_id);
            }
            _ => {}
        }
    }

    fn deliver(&mut self, msg: &ProtocolMessage) -> Result<(), SimError> {
        self.log_delivery(msg);
        self.check_discipline(msg)?;
        let mut ctx = self.ctx();
        if self.is_operator(msg.receiver) {
            let (emits, merge) = self.operators[msg.receiver].on_message(
                msg,
                &self.config,
                &self.specialties,
                &mut ctx,
            )?;
            if let Some(event) = merge {
                self.merges.push(event);
            }
            self.absorb(ctx, msg.receiver, emits);
        } else {
            let node_index = msg.receiver - self.operators.len();
            if node_index >= self.nodes.len() {
                return Err(SimError::Protocol {
                    tick: self.now,
                    detail: format!("message to nonexistent agent {}", msg.receiver),
                });
            }
            let (emits, execution) =
                self.nodes[node_index].on_message(msg, &self.config, &mut ctx)?;
            if let Some(event) = execution {
                self.executions.push(event);
            }
            self.absorb(ctx, msg.receiver, emits);
        }
        Ok(())
    }

    /// A reply to a tracked conversation must come from the agent that was
    /// asked and go back to the asker.
    fn check_discipline(&self, msg: &ProtocolMessage) -> Result<(), SimError> {
        let is_reply = matches!(
            msg.body,
            MessageBody::InformRecommenders { .. }
                | MessageBody::InformExpertise { .. }
                | MessageBody::InformRecommendation { .. }
                | MessageBody::InformExecutionResult { .. }
        );
        if !is_reply {
            return Ok(());
        }
        // Delivery happens after `track` already retired the conversation,
        // so look the envelope over on its own: sender answered, receiver
        // asked. The per-agent pending maps catch duplicate replies; here we
        // reject replies that were never requested at all.
        match self.open.get(&msg.conversation_id) {
            None => Ok(()),
            Some(open) => {
                if open.asked != msg.sender || open.asker != msg.receiver {
                    Err(SimError::Protocol {
                        tick: self.now,
                        detail: format!(
                            "conversation {} reply routed {} -> {}, expected {} -> {}",
                            msg.conversation_id, msg.sender, msg.receiver, open.asked, open.asker
                        ),
                    })
                } else {
                    Ok(())
                }
            }
        }
    }

    fn log_delivery(&mut self, msg: &ProtocolMessage) {
        if self.log == LogLevel::Off && self.log_lines.is_none() {
            return;
        }
        let mut line = format!(
            "t={} {} {} -> {} c={}",
            self.now,
            msg.body.variant_name(),
            msg.sender,
            msg.receiver,
            msg.conversation_id
        );
        if self.log == LogLevel::Debug {
            if let MessageBody::InformRecommendation { plan, .. } = &msg.body {
                match plan {
                    Some(p) => {
                        line.push_str(" plan=");
                        for (i, op) in p.ops.iter().enumerate() {
                            if i > 0 {
                                line.push(';');
                            }
                            line.push_str(&format!(
                                "{},{},{}",
                                op.node_type, op.node_subtype, op.intended_timestep
                            ));
                        }
                    }
                    None => line.push_str(" plan=none"),
                }
            }
        }
        self.emit_log(line);
    }

    fn emit_log(&mut self, line: String) {
        match &mut self.log_lines {
            Some(buf) => buf.push(line),
            None => println!("{line}"),
        }
    }
}
