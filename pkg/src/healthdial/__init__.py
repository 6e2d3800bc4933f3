"""healthdial: turn patient-education text into validated, session-based
finite-state-machine dialogues for virtual agents.

The engine covers the whole authoring loop: material intake, LLM-drafted
session planning and dialogue generation with bounded repair retries,
command-based editing with undo/redo, playthrough preview, and deterministic
export to the ``.hdfsm`` markup. Only author-validated deterministic
dialogues ever reach patients; live model output never does.
"""

from .editing import (
    CommandKind,
    EditCommand,
    EditHistory,
    apply,
    content_hash,
    project_hash,
    redo,
    revision_count,
    undo,
)
from .exceptions import (
    EditError,
    EmptyDialogueError,
    HealthDialError,
    InvalidStructuredOutputError,
    NoNovelOptionsError,
    ParseFailure,
    PlayError,
    ProviderError,
    SerializeError,
    StoreError,
)
from .markup import (
    FILE_EXTENSION,
    MarkupDocument,
    ParseError,
    ParseErrorKind,
    document_for,
    parse,
    parse_session_plan_json,
    serialize,
)
from .model import (
    END,
    Defect,
    DefectKind,
    DialogueFsm,
    DialogueState,
    FsmStats,
    Material,
    MaterialSource,
    Project,
    ResponseOption,
    SessionPlan,
    SessionTopic,
    ValidationReport,
    fsm_stats,
    reachable_states,
    validate_fsm,
)
from .orchestration import (
    CompletionRequest,
    CompletionResult,
    HttpProvider,
    LlmExchange,
    LlmProvider,
    OptionDraft,
    RevisionCue,
    ScriptedProvider,
    generate_all,
    generate_fsm,
    key_point_coverage,
    plan_sessions,
    suggest_options,
)
from .runtime import PlaySession, ProgressLedger, choose, enumerate_paths, start
from .store import ProjectStore

__version__ = "0.1.0"
