"""Prompt templates sent to the chat model.

Both templates are byte-stable constants. Substitution is single-pass
placeholder replacement rather than str.format, so substituted text may
contain braces, quotes, or anything else without disturbing the template.
"""

from __future__ import annotations

import re

NEGATION_PROMPT_TEMPLATE = """You are a biomedical researcher extracting negations of ontological predicates.

Your Task:
Given a description, return its natural negation.

Rules:
1. Preserve the meaning but negate the entire description.
3. Do not summarize or change the structure of the descriptor text.
4. If there is not enough information to create a negation, your response should be "NOT ENOUGH INFORMATION"
4. Only return the negation—no explanations or extra text.

Examples:
- "has effect" → "does not have effect"
- "during which ends" → "during which does not ends"
- "happens during" → "does not happen during"

Input: "{descriptor_text}"

Output: A JSON object with these exact keys and format:
{"negation_of_the_descriptor_text": "negated version" or "NOT ENOUGH INFORMATION"}"""

RERANK_PROMPT_TEMPLATE = """You are an expert in biomedical relationships. Based on the text below:

Subject: {subject}
Object: {object}
Original Relationship: {relationship}
Abstract: {abstract}

Candidate Predicates:
{choices_str}

Instructions:
- Choose the best predicate from the list that matches the intended meaning and direction.
- If the original relationship implies negation (e.g., "does not cause"), select the matching base predicate, but set "negated" to "True".
- If no match exists, return `"mapped_predicate": "none"`.

Respond with ONLY this JSON object:
{"mapped_predicate": "one of the predicate keys or 'none'", "negated": "True" or "False"}"""

# Sentinel the negation prompt instructs the model to emit when a
# descriptor cannot be negated.
NOT_ENOUGH_INFORMATION = "NOT ENOUGH INFORMATION"

# Exact key the negation prompt demands in the response object.
NEGATION_RESPONSE_KEY = "negation_of_the_descriptor_text"

_PLACEHOLDER_RE = re.compile(
    r"\{(descriptor_text|subject|object|relationship|abstract|choices_str)\}"
)


def render(template: str, **values: str) -> str:
    """Fill a template's named placeholders in a single left-to-right pass.

    Each placeholder in the template is replaced exactly once; replacement
    text is never rescanned, so values containing placeholder-like text
    cannot corrupt the output.
    """
    return _PLACEHOLDER_RE.sub(lambda m: values[m.group(1)], template)
