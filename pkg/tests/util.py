"""Shared helpers for model-level tests."""

import numpy as np

from memqa.corpus import EncodedSample


def toy_sample(input_ids, eos_positions, question_ids, answer_id, supporting=None):
    """EncodedSample with throwaway text fields, for direct model tests."""
    eos_positions = list(eos_positions)
    return EncodedSample(
        input_ids=np.asarray(input_ids, dtype=np.int64),
        eos_positions=eos_positions,
        question_ids=np.asarray(question_ids, dtype=np.int64),
        answer_id=int(answer_id),
        supporting=list(supporting or []),
        context_lines=list(range(1, len(eos_positions) + 1)),
        fact_texts=[f"fact {i + 1}" for i in range(len(eos_positions))],
        question_text="toy question",
        answer_text="toy",
    )
