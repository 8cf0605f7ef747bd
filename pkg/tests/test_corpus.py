"""Tests for task-file parsing, vocabulary and integer encoding."""

import numpy as np
import pytest

import synthbabi
from memqa.corpus import (
    EOS_ID,
    PAD_ID,
    Vocabulary,
    build_vocabulary,
    encode_corpus,
    encode_sample,
    load_task,
    parse_task_file,
    render_story,
    resolve_task_files,
    tokenize,
)
from memqa.errors import ArgumentError, ParseError, VocabularyError

WORKED_EXAMPLE = """\
1 Mary got the milk there.
2 John moved to the bedroom.
3 Sandra went back to the kitchen.
4 Mary travelled to the hallway.
5 Where is the milk?\thallway\t1 4
6 John got the football there.
7 John went to the hallway.
8 Where is the football?\thallway\t6 7
"""

TINY = """\
1 mary got the milk there.
2 john moved to the bedroom.
3 where is the milk?\thallway\t1
"""


class TestTokenize:
    def test_lowercases_and_strips_terminal_punctuation(self):
        assert tokenize("Mary got the milk there.") == ["mary", "got", "the", "milk", "there"]
        assert tokenize("Where is the milk?") == ["where", "is", "the", "milk"]
        assert tokenize("Go west!") == ["go", "west"]

    def test_lone_punctuation_dropped(self):
        assert tokenize("hello . world ?") == ["hello", "world"]


class TestParsing:
    def test_worked_example_structure(self):
        """A two-question story yields one Story with 8 slots and 2 samples."""
        stories = parse_task_file(lines=WORKED_EXAMPLE.splitlines())
        assert len(stories) == 1
        story = stories[0]
        assert len(story.sentences) == 8
        assert story.statement_count == 6
        assert story.sentences[4] is None and story.sentences[7] is None
        assert len(story.qas) == 2

        first, second = story.qas
        assert first.question == ["where", "is", "the", "milk"]
        assert first.answer == "hallway"
        assert first.supporting == [1, 4]
        assert first.line_index == 5
        assert first.context == [0, 1, 2, 3]

        assert second.supporting == [6, 7]
        assert second.context == [0, 1, 2, 3, 5, 6]
        assert second.context_lines == [1, 2, 3, 4, 6, 7]

    def test_new_story_on_line_number_reset(self):
        text = TINY + TINY
        stories = parse_task_file(lines=text.splitlines())
        assert len(stories) == 2
        assert all(len(s.qas) == 1 for s in stories)

    def test_comma_joined_answer_is_one_token(self):
        lines = ["1 the path goes north then south.", "2 how could you go?\tn,s\t1"]
        story = parse_task_file(lines=lines)[0]
        assert story.qas[0].answer == "n,s"

    def test_blank_lines_ignored(self):
        stories = parse_task_file(lines=["", "1 mary went home.", "  "])
        assert len(stories) == 1

    def test_bad_line_number_reports_position(self):
        with pytest.raises(ParseError) as exc:
            parse_task_file(lines=["1 mary went home.", "oops no number"])
        assert "line 2" in str(exc.value)

    def test_out_of_sequence_number(self):
        with pytest.raises(ParseError) as exc:
            parse_task_file(lines=["1 mary went home.", "3 john went home."])
        assert "expected 2" in str(exc.value)

    def test_missing_story_start(self):
        with pytest.raises(ParseError):
            parse_task_file(lines=["2 mary went home."])

    def test_question_without_answer(self):
        with pytest.raises(ParseError) as exc:
            parse_task_file(lines=["1 where is mary?\t"])
        assert "answer" in str(exc.value)

    def test_bad_supporting_reference(self):
        with pytest.raises(ParseError) as exc:
            parse_task_file(lines=["1 where is mary?\thome\tmaybe"])
        assert "'maybe'" in str(exc.value)

    def test_exactly_one_input_required(self):
        with pytest.raises(ArgumentError):
            parse_task_file()


class TestRender:
    def test_round_trip_is_stable(self):
        """parse -> render -> parse reproduces the same stories."""
        rng = np.random.default_rng(42)
        for task in (1, 4):
            text = synthbabi.gen_task(task, rng, 6)
            stories = parse_task_file(lines=text.splitlines())
            rendered = "".join(render_story(s) for s in stories)
            again = parse_task_file(lines=rendered.splitlines())
            assert again == stories
            assert "".join(render_story(s) for s in again) == rendered


class TestVocabulary:
    def test_reserved_ids(self):
        vocab = build_vocabulary(parse_task_file(lines=TINY.splitlines()), [])
        assert vocab.id_of("<pad>") == PAD_ID == 0
        assert vocab.id_of("<eos>") == EOS_ID == 1

    def test_insertion_order(self):
        vocab = build_vocabulary(parse_task_file(lines=TINY.splitlines()), [])
        assert vocab.id_of("mary") == 2
        assert vocab.id_of("got") == 3
        assert vocab.id_of("the") == 4
        assert vocab.id_of("milk") == 5
        assert vocab.id_of("there") == 6
        assert vocab.id_of("john") == 7
        # question tokens then the answer follow the statements
        assert vocab.id_of("where") == 11
        assert vocab.id_of("is") == 12
        assert vocab.id_of("hallway") == 13
        assert len(vocab) == 14

    def test_closed_over_both_splits(self):
        train = parse_task_file(lines=TINY.splitlines())
        test = parse_task_file(lines=["1 sandra grabbed the apple.", "2 where is the apple?\tgarden\t1"])
        vocab = build_vocabulary(train, test)
        assert "sandra" in vocab and "garden" in vocab

    def test_unknown_token_raises(self):
        vocab = Vocabulary(["a"])
        with pytest.raises(VocabularyError) as exc:
            vocab.id_of("zebra")
        assert "zebra" in str(exc.value)
        assert isinstance(exc.value, KeyError)

    def test_unknown_id_raises(self):
        with pytest.raises(VocabularyError):
            Vocabulary().token_of(99)

    def test_from_tokens_round_trip(self):
        vocab = build_vocabulary(parse_task_file(lines=TINY.splitlines()), [])
        again = Vocabulary.from_tokens(vocab.tokens)
        assert again.tokens == vocab.tokens
        assert again.id_of("milk") == vocab.id_of("milk")

    def test_from_tokens_requires_sentinels(self):
        with pytest.raises(ArgumentError):
            Vocabulary.from_tokens(["milk", "there"])


class TestEncoding:
    def test_tiny_example_ids(self):
        """Hand-derived ids for a two-statement story."""
        stories = parse_task_file(lines=TINY.splitlines())
        vocab = build_vocabulary(stories, [])
        sample = encode_sample(stories[0], stories[0].qas[0], vocab)
        np.testing.assert_array_equal(
            sample.input_ids, [2, 3, 4, 5, 6, 1, 7, 8, 9, 4, 10, 1]
        )
        assert sample.eos_positions == [5, 11]
        assert sample.fact_count == 2
        np.testing.assert_array_equal(sample.question_ids, [11, 12, 4, 5])
        assert sample.answer_id == vocab.id_of("hallway")
        assert sample.supporting == [1]
        assert sample.fact_texts == ["mary got the milk there", "john moved to the bedroom"]
        assert sample.question_text == "where is the milk"
        assert sample.answer_text == "hallway"

    def test_eos_closes_every_fact(self):
        """One EOS per context statement, each at the statement's last slot."""
        rng = np.random.default_rng(43)
        text = synthbabi.gen_task(1, rng, 4)
        stories = parse_task_file(lines=text.splitlines())
        vocab = build_vocabulary(stories, [])
        for sample in encode_corpus(stories, vocab):
            ids = sample.input_ids
            assert [int(i) for i in ids[sample.eos_positions]] == [EOS_ID] * sample.fact_count
            assert sample.eos_positions[-1] == len(ids) - 1
            assert int(np.sum(ids == EOS_ID)) == sample.fact_count

    def test_oov_token_raises(self):
        stories = parse_task_file(lines=TINY.splitlines())
        vocab = Vocabulary(["mary"])
        with pytest.raises(VocabularyError):
            encode_sample(stories[0], stories[0].qas[0], vocab)

    def test_question_with_no_context_rejected(self):
        story = parse_task_file(lines=["1 where is mary?\thome\t"])[0]
        vocab = Vocabulary(["where", "is", "mary", "home"])
        with pytest.raises(ArgumentError):
            encode_sample(story, story.qas[0], vocab)

    def test_corpus_order_is_story_then_question(self):
        stories = parse_task_file(lines=(TINY + TINY).splitlines())
        vocab = build_vocabulary(stories, [])
        samples = encode_corpus(stories, vocab)
        assert len(samples) == 2


class TestTaskFiles:
    def test_load_task_resolves_layout(self, tmp_path):
        synthbabi.write_task(tmp_path, 1, train_stories=3, test_stories=2)
        train, test = load_task(str(tmp_path), 1)
        assert len(train) == 3 and len(test) == 2
        assert sum(len(s.qas) for s in train) == 6

    def test_missing_layout(self, tmp_path):
        with pytest.raises(ArgumentError):
            load_task(str(tmp_path), 1)

    def test_missing_task(self, tmp_path):
        synthbabi.write_task(tmp_path, 4, train_stories=2, test_stories=2)
        with pytest.raises(FileNotFoundError):
            load_task(str(tmp_path), 1)

    def test_task_number_match_is_exact(self, tmp_path):
        """Task 1 must not match a qa19 file."""
        endir = tmp_path / "en"
        endir.mkdir()
        (endir / "qa19_path-finding_train.txt").write_text(TINY)
        (endir / "qa19_path-finding_test.txt").write_text(TINY)
        with pytest.raises(FileNotFoundError):
            resolve_task_files(str(tmp_path), 1)

    def test_ambiguous_task(self, tmp_path):
        synthbabi.write_task(tmp_path, 1, train_stories=1, test_stories=1)
        extra = tmp_path / "en" / "qa1_other_train.txt"
        extra.write_text(TINY)
        with pytest.raises(ArgumentError):
            resolve_task_files(str(tmp_path), 1)


class TestGenerators:
    """The synthetic stories must be solvable and correctly annotated."""

    def test_movement_answers_follow_latest_move(self):
        rng = np.random.default_rng(44)
        text = synthbabi.gen_task(1, rng, 30)
        for story in parse_task_file(lines=text.splitlines()):
            for qa in story.qas:
                person = qa.question[-1]
                latest = None
                for i in qa.context:
                    tokens = story.sentences[i]
                    if tokens[0] == person:
                        latest = (tokens[-1], i + 1)
                assert latest is not None
                assert qa.answer == latest[0]
                assert qa.supporting == [latest[1]]

    def test_relation_answer_in_supporting_statement(self):
        rng = np.random.default_rng(45)
        text = synthbabi.gen_task(4, rng, 50)
        for story in parse_task_file(lines=text.splitlines()):
            (qa,) = story.qas
            assert len(qa.supporting) == 1
            statement = story.sentences[qa.supporting[0] - 1]
            assert qa.answer in statement

    def test_question_volume(self):
        rng = np.random.default_rng(46)
        stories = parse_task_file(lines=synthbabi.gen_task(1, rng, 10).splitlines())
        assert sum(len(s.qas) for s in stories) == 20
