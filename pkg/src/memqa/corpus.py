"""Parsing, vocabulary building and integer encoding for bAbI task files.

The on-disk format is numbered lines grouped into stories. A line whose
number restarts at 1 opens a new story. Statement lines hold one sentence;
question lines hold question, answer and supporting-fact line numbers
separated by tabs. Example:

    1 Mary got the milk there.
    2 John moved to the bedroom.
    3 Where is the milk?	hallway	1

Supporting-fact numbers are carried through for inspection only; training
never consumes them.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, ParseError, VocabularyError

PAD_TOKEN = "<pad>"
EOS_TOKEN = "<eos>"
PAD_ID = 0
EOS_ID = 1

_TERMINAL_PUNCT = ".?!"


def tokenize(text):
    """Lowercased whitespace tokens with terminal punctuation stripped."""
    tokens = []
    for raw in text.lower().split():
        tok = raw.rstrip(_TERMINAL_PUNCT)
        if tok:
            tokens.append(tok)
    return tokens


@dataclass
class QASample:
    """One question asked at a specific line of a story.

    ``context`` holds 0-based indices into the story's sentence slots for
    every statement preceding the question; ``supporting`` and
    ``context_lines`` use the file's 1-based line numbers.
    """

    question: list
    answer: str
    supporting: list
    line_index: int
    context: list

    @property
    def context_lines(self):
        return [i + 1 for i in self.context]


@dataclass
class Story:
    """Numbered sentence slots plus the questions asked along the way.

    ``sentences[i]`` is the token list for line ``i + 1``, or None when that
    line was a question.
    """

    sentences: list = field(default_factory=list)
    qas: list = field(default_factory=list)

    @property
    def statement_count(self):
        return sum(1 for s in self.sentences if s is not None)


class Vocabulary:
    """Token/id bijection with ids 0 and 1 reserved for padding and EOS."""

    def __init__(self, tokens=None):
        self._tokens = [PAD_TOKEN, EOS_TOKEN]
        self._ids = {PAD_TOKEN: PAD_ID, EOS_TOKEN: EOS_ID}
        if tokens:
            for tok in tokens:
                self.add(tok)

    def add(self, token):
        if token not in self._ids:
            self._ids[token] = len(self._tokens)
            self._tokens.append(token)
        return self._ids[token]

    def id_of(self, token):
        try:
            return self._ids[token]
        except KeyError:
            raise VocabularyError(f"token {token!r} not in vocabulary") from None

    def token_of(self, token_id):
        if not 0 <= token_id < len(self._tokens):
            raise VocabularyError(f"id {token_id} outside vocabulary of size {len(self._tokens)}")
        return self._tokens[token_id]

    def __contains__(self, token):
        return token in self._ids

    def __len__(self):
        return len(self._tokens)

    @property
    def tokens(self):
        return list(self._tokens)

    @classmethod
    def from_tokens(cls, tokens):
        """Rebuild from a full token list, as stored in checkpoints."""
        if len(tokens) < 2 or tokens[0] != PAD_TOKEN or tokens[1] != EOS_TOKEN:
            raise ArgumentError("token list must start with the pad and EOS sentinels")
        return cls(tokens[2:])


def parse_task_file(path=None, lines=None):
    """Parse one task file (or prepared lines) into stories.

    Malformed input raises ParseError carrying the 1-based line number.
    """
    if (path is None) == (lines is None):
        raise ArgumentError("pass exactly one of path or lines")
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()

    stories = []
    story = None
    for line_no, raw in enumerate(lines, start=1):
        # tabs are field separators, so only spaces and newlines are trimmed
        text = raw.strip(" \r\n")
        if not text.strip():
            continue
        head, _, rest = text.partition(" ")
        try:
            number = int(head)
        except ValueError:
            raise ParseError(f"expected a leading line number, got {head!r}", line_number=line_no)
        if number == 1:
            story = Story()
            stories.append(story)
        if story is None:
            raise ParseError("file does not start a story at line number 1", line_number=line_no)
        if number != len(story.sentences) + 1:
            raise ParseError(
                f"line number {number} out of sequence (expected {len(story.sentences) + 1})",
                line_number=line_no,
            )
        if "\t" in rest:
            parts = rest.split("\t")
            if len(parts) < 2 or not parts[1].strip():
                raise ParseError("question line is missing an answer field", line_number=line_no)
            question = tokenize(parts[0])
            if not question:
                raise ParseError("question line has no question text", line_number=line_no)
            answer = parts[1].strip().lower()
            supporting = []
            if len(parts) > 2 and parts[2].strip():
                for item in parts[2].split():
                    try:
                        supporting.append(int(item))
                    except ValueError:
                        raise ParseError(
                            f"supporting fact reference {item!r} is not a line number",
                            line_number=line_no,
                        ) from None
            context = [i for i, s in enumerate(story.sentences) if s is not None]
            story.sentences.append(None)
            story.qas.append(
                QASample(
                    question=question,
                    answer=answer,
                    supporting=supporting,
                    line_index=len(story.sentences),
                    context=context,
                )
            )
        else:
            tokens = tokenize(rest)
            if not tokens:
                raise ParseError("statement line has no words", line_number=line_no)
            story.sentences.append(tokens)
    return stories


def render_story(story):
    """Story back to task-file text; parsing the result reproduces the story."""
    out = []
    qa_by_line = {qa.line_index: qa for qa in story.qas}
    for i, slot in enumerate(story.sentences):
        n = i + 1
        if slot is not None:
            out.append(f"{n} {' '.join(slot)}.")
        else:
            qa = qa_by_line[n]
            support = " ".join(str(s) for s in qa.supporting)
            out.append(f"{n} {' '.join(qa.question)}?\t{qa.answer}\t{support}")
    return "\n".join(out) + "\n"


def build_vocabulary(train_stories, test_stories):
    """Vocabulary closed over both splits, ids in first-occurrence order.

    Traversal follows reading order: each story's slots in sequence, with a
    question slot contributing its question tokens then its answer token.
    """
    vocab = Vocabulary()
    for story in list(train_stories) + list(test_stories):
        qa_by_line = {qa.line_index: qa for qa in story.qas}
        for i, slot in enumerate(story.sentences):
            if slot is not None:
                for tok in slot:
                    vocab.add(tok)
            else:
                qa = qa_by_line[i + 1]
                for tok in qa.question:
                    vocab.add(tok)
                vocab.add(qa.answer)
    return vocab


@dataclass
class EncodedSample:
    """One question as integer sequences ready for the models.

    ``input_ids`` is the concatenation of every context statement's token
    ids, each statement followed by the EOS id; ``eos_positions`` indexes
    those EOS slots, one per fact. Text fields are carried for trace output.
    """

    input_ids: np.ndarray
    eos_positions: list
    question_ids: np.ndarray
    answer_id: int
    supporting: list
    context_lines: list
    fact_texts: list
    question_text: str
    answer_text: str

    @property
    def fact_count(self):
        return len(self.eos_positions)


def encode_sample(story, qa, vocab):
    """Integer-encode one question against its story context."""
    if not qa.context:
        raise ArgumentError("question has no preceding statements to encode")
    ids = []
    eos_positions = []
    fact_texts = []
    for si in qa.context:
        tokens = story.sentences[si]
        for tok in tokens:
            ids.append(vocab.id_of(tok))
        ids.append(EOS_ID)
        eos_positions.append(len(ids) - 1)
        fact_texts.append(" ".join(tokens))
    question_ids = [vocab.id_of(tok) for tok in qa.question]
    if not question_ids:
        raise ArgumentError("question is empty")
    return EncodedSample(
        input_ids=np.asarray(ids, dtype=np.int64),
        eos_positions=eos_positions,
        question_ids=np.asarray(question_ids, dtype=np.int64),
        answer_id=vocab.id_of(qa.answer),
        supporting=list(qa.supporting),
        context_lines=qa.context_lines,
        fact_texts=fact_texts,
        question_text=" ".join(qa.question),
        answer_text=qa.answer,
    )


def encode_corpus(stories, vocab):
    """Every question of every story, in story order then question order."""
    return [encode_sample(story, qa, vocab) for story in stories for qa in story.qas]


def resolve_task_files(root, task):
    """Locate the train and test files for a task under ``<root>/en``."""
    endir = os.path.join(root, "en")
    if not os.path.isdir(endir):
        raise ArgumentError(f"no 'en' directory under {root!r}")
    pattern = re.compile(rf"^qa{int(task)}_(.+)_train\.txt$")
    matches = sorted(f for f in os.listdir(endir) if pattern.match(f))
    if not matches:
        raise FileNotFoundError(f"no train file for task {task} in {endir!r}")
    if len(matches) > 1:
        raise ArgumentError(f"task {task} is ambiguous in {endir!r}: {matches}")
    train_path = os.path.join(endir, matches[0])
    test_path = train_path[: -len("_train.txt")] + "_test.txt"
    if not os.path.isfile(test_path):
        raise FileNotFoundError(f"missing test file {test_path!r}")
    return train_path, test_path


def load_task(root, task):
    """Parsed (train_stories, test_stories) for one task."""
    train_path, test_path = resolve_task_files(root, task)
    return parse_task_file(train_path), parse_task_file(test_path)
