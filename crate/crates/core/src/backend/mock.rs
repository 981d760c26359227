use crate::context::{ScriptBlock, StrategyBlock, CLOSING_MARKER};
use crate::script::NodeKind;

use super::{estimate_tokens, Backend, BackendError, Completion, CompletionRequest, Usage};

/// Fixed reply of [`FreeformMock`].
pub const FREEFORM_REPLY: &str = "That sounds difficult. Tell me more about how you feel.";

/// Reply of [`ScriptFaithfulMock`] when the prompt carries no script block.
pub const NEUTRAL_REFLECTION: &str = "It seems like that has been weighing on your mind lately.";

/// Behaves like an ideal model that follows the navigation rules: it reads
/// the script block and answers with the scripted node texts verbatim.
///
/// * script block: starts at the first Bot node listed in `next` and emits
///   one line per node while the script continues without user input,
///   stopping after a question, before options, or at a terminal (which adds
///   the closing marker). If `next` holds only options, the question that
///   offered them is repeated.
/// * strategy block: reflects right after a question, then gives
///   information if any is left, then asks the next question. A nudge
///   skips straight to the question.
/// * neither: [`NEUTRAL_REFLECTION`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ScriptFaithfulMock;

impl ScriptFaithfulMock {
    fn reply(&self, request: &CompletionRequest) -> String {
        if let Some(block) = StrategyBlock::find(&request.system_prompt) {
            return strategy_reply(&block);
        }
        match ScriptBlock::find(&request.system_prompt) {
            Some(block) => script_reply(&block).unwrap_or_else(|| NEUTRAL_REFLECTION.to_string()),
            None => NEUTRAL_REFLECTION.to_string(),
        }
    }
}

fn strategy_reply(block: &StrategyBlock) -> String {
    let code = |wanted: &str, fallback: usize| {
        block
            .labels
            .iter()
            .find(|l| l.as_str() == wanted)
            .or_else(|| block.labels.get(fallback))
            .cloned()
            .unwrap_or_else(|| wanted.to_string())
    };
    let streak = block.non_question_streak;
    if streak == 0 && !block.nudge {
        code("reflection", 1)
    } else if block.info_available && streak == 1 && !block.nudge {
        code("information", 2)
    } else if block.pending_questions > 0 {
        code("question", 0)
    } else if block.info_available {
        code("information", 2)
    } else {
        code("reflection", 1)
    }
}

fn script_reply(block: &ScriptBlock) -> Option<String> {
    let start = block
        .header
        .next
        .iter()
        .filter_map(|id| block.node(id))
        .find(|n| n.kind != NodeKind::UserOption);
    let Some(mut node) = start else {
        // Only options are expected: ask again.
        let option = block.header.next.first()?;
        let parent = block.nodes.iter().find(|n| n.children.contains(option))?;
        return Some(parent.text.clone());
    };
    let mut lines = Vec::new();
    loop {
        if !node.text.is_empty() {
            lines.push(node.text.clone());
        }
        match node.kind {
            NodeKind::Terminal => {
                lines.push(CLOSING_MARKER.to_string());
                break;
            }
            NodeKind::TherapeuticQuestion => break,
            _ => {}
        }
        let next = match node.children.as_slice() {
            [only] => block.node(only),
            _ => None,
        };
        match next {
            Some(child) if child.kind != NodeKind::UserOption => node = child,
            _ => break,
        }
    }
    Some(lines.join("\n"))
}

fn completion(request: &CompletionRequest, text: String) -> Completion {
    let prompt: usize = estimate_tokens(&request.system_prompt)
        + request
            .messages
            .iter()
            .map(|m| estimate_tokens(&m.text))
            .sum::<usize>();
    Completion {
        usage: Usage {
            prompt_tokens: Some(prompt as u32),
            completion_tokens: Some(estimate_tokens(&text) as u32),
        },
        text,
    }
}

impl Backend for ScriptFaithfulMock {
    fn name(&self) -> &str {
        "script_faithful"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        request.check()?;
        Ok(completion(request, self.reply(request)))
    }
}

/// Ignores the script entirely and always answers [`FREEFORM_REPLY`].
#[derive(Debug, Clone, Copy, Default)]
pub struct FreeformMock;

impl Backend for FreeformMock {
    fn name(&self) -> &str {
        "freeform"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        request.check()?;
        Ok(completion(request, FREEFORM_REPLY.to_string()))
    }
}
