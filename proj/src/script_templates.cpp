#include <string_view>

#include "rlar/error.hpp"
#include "rlar/synthesis.hpp"

namespace rlar {

namespace {

constexpr std::string_view kMathTemplate = R"PY(import re

_NUMBER = re.compile(r"[-+]?(?:\d[\d,]*(?:\.\d+)?(?:\s*/\s*\d+)?|\.\d+)")


def _to_number(text):
    if text is None:
        return None
    s = str(text).strip().replace(",", "").replace("$", "").replace(" ", "")
    s = s.rstrip(".")
    frac = re.fullmatch(r"(-?)\\[dt]?frac\{([^{}]+)\}\{([^{}]+)\}", s)
    if frac:
        num, den = _to_number(frac.group(2)), _to_number(frac.group(3))
        if num is None or den is None or den == 0:
            return None
        value = num / den
        return -value if frac.group(1) else value
    if "/" in s:
        a, _, b = s.partition("/")
        num, den = _to_number(a), _to_number(b)
        if num is None or den is None or den == 0:
            return None
        return num / den
    if re.fullmatch(r"[-+]?(\d+(\.\d*)?|\.\d+)([eE][-+]?\d+)?", s):
        return float(s)
    return None


def _last_boxed(text):
    start = text.rfind("\\boxed{")
    if start < 0:
        return None
    begin = start + len("\\boxed{")
    depth = 0
    for i in range(begin - 1, len(text)):
        if text[i] == "{":
            depth += 1
        elif text[i] == "}":
            depth -= 1
            if depth == 0:
                return text[begin:i]
    return None


def _extract(response):
    pos = response.rfind("####")
    if pos >= 0:
        line = response[pos + 4:].split("\n", 1)[0].replace("$", "")
        match = _NUMBER.search(line)
        if match:
            value = _to_number(match.group(0))
            if value is not None:
                return value
    boxed = _last_boxed(response)
    if boxed is not None:
        return _to_number(boxed)
    return None


def compute_numeric_match(prompt, candidate_response, reference_response):
    reference = _to_number(reference_response)
    if reference is None and reference_response is not None:
        reference = _extract(str(reference_response))
    answer = _extract(candidate_response or "")
    if reference is None or answer is None:
        return 0.0
    tolerance = 1e-6 * abs(reference) if abs(reference) > 1 else 1e-6
    return 1.0 if abs(answer - reference) <= tolerance else 0.0
)PY";

constexpr std::string_view kCodeTemplate = R"PY(import json
import subprocess
import sys

_CASE_TIMEOUT_SECONDS = 3


def _last_code_block(text):
    parts = text.split("```")
    fences = len(parts) - 1
    if fences < 2:
        return None
    body = parts[2 * (fences // 2) - 1]
    first, sep, rest = body.partition("\n")
    if sep and not any(c.isspace() for c in first) and len(first) <= 20:
        body = rest
    return body


def _normalize(text):
    lines = [line.rstrip() for line in text.split("\n")]
    while lines and lines[-1] == "":
        lines.pop()
    return "\n".join(lines)


def compute_unit_tests(prompt, candidate_response, reference_response):
    try:
        cases = json.loads(reference_response or "[]")
    except ValueError:
        return 0.0
    code = _last_code_block(candidate_response or "")
    if code is None or not cases:
        return 0.0
    for case in cases:
        try:
            proc = subprocess.run(
                [sys.executable, "-I", "-c", code],
                input=case.get("input", ""),
                capture_output=True,
                text=True,
                timeout=_CASE_TIMEOUT_SECONDS,
            )
        except subprocess.TimeoutExpired:
            return 0.0
        if proc.returncode != 0:
            return 0.0
        if _normalize(proc.stdout) != _normalize(case.get("output", "")):
            return 0.0
    return 1.0
)PY";

constexpr std::string_view kMetricTemplate = R"PY(import math
import string
from collections import Counter

_EPSILON = 1e-9
_SPACE = " \t\n\r\v\f"


def _tokenize(text):
    tokens, current = [], []
    for ch in text or "":
        if ch in _SPACE:
            if current:
                tokens.append("".join(current))
                current = []
        elif ord(ch) < 128 and ch in string.punctuation:
            if current:
                tokens.append("".join(current))
                current = []
            tokens.append(ch)
        else:
            current.append(ch.lower() if ord(ch) < 128 else ch)
    if current:
        tokens.append("".join(current))
    return tokens


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def compute_bleu2(prompt, candidate_response, reference_response):
    cand = _tokenize(candidate_response)
    ref = _tokenize(reference_response)
    if not cand:
        return 0.0
    log_precision = 0.0
    for n in (1, 2):
        total = max(len(cand) - n + 1, 0)
        ref_total = max(len(ref) - n + 1, 0)
        if total == 0:
            p = 1.0 if ref_total == 0 else _EPSILON
        else:
            ref_counts = _ngrams(ref, n)
            matches = sum(min(c, ref_counts[g]) for g, c in _ngrams(cand, n).items())
            p = (matches if matches else _EPSILON) / total
        log_precision += math.log(p)
    bp = min(1.0, math.exp(1.0 - len(ref) / len(cand)))
    return max(0.0, min(1.0, bp * math.exp(log_precision / 2.0)))
)PY";

}  // namespace

std::string_view to_string(ScriptTemplate kind) {
  switch (kind) {
    case ScriptTemplate::kMathAnswer: return "math";
    case ScriptTemplate::kCodeTests: return "code";
    case ScriptTemplate::kTextMetric: return "metric";
  }
  return "metric";
}

std::optional<ScriptTemplate> parse_script_template(std::string_view text) {
  if (text == "math") return ScriptTemplate::kMathAnswer;
  if (text == "code") return ScriptTemplate::kCodeTests;
  if (text == "metric") return ScriptTemplate::kTextMetric;
  return std::nullopt;
}

ScriptTemplate template_for(std::string_view task_label) {
  switch (task_family_for(task_label)) {
    case TaskFamily::kMath: return ScriptTemplate::kMathAnswer;
    case TaskFamily::kCode: return ScriptTemplate::kCodeTests;
    case TaskFamily::kText: return ScriptTemplate::kTextMetric;
  }
  return ScriptTemplate::kTextMetric;
}

TaskFamily family_of(ScriptTemplate kind) {
  switch (kind) {
    case ScriptTemplate::kMathAnswer: return TaskFamily::kMath;
    case ScriptTemplate::kCodeTests: return TaskFamily::kCode;
    case ScriptTemplate::kTextMetric: return TaskFamily::kText;
  }
  return TaskFamily::kText;
}

SynthesizedScript instantiate_template(ScriptTemplate kind) {
  switch (kind) {
    case ScriptTemplate::kMathAnswer:
      return SynthesizedScript{"compute_numeric_match", std::string(kMathTemplate), {}};
    case ScriptTemplate::kCodeTests:
      return SynthesizedScript{"compute_unit_tests", std::string(kCodeTemplate), {}};
    case ScriptTemplate::kTextMetric:
      return SynthesizedScript{"compute_bleu2", std::string(kMetricTemplate), {}};
  }
  fail(ErrorCode::kInvalidArgument, "unknown script template");
}

}  // namespace rlar
