from .vocab import VocabSpec, dyck_vocab, sequence_vocab, vocab_for
from .generators import (
    KINDS, LM_KINDS, TOKEN_KINDS, DegenerateInputError, GenConfig, GenConfigError, ProcSample,
    curriculum_start, dedup, frame_delete, frame_identity, frame_reverse, frame_set, frame_sort,
    frame_stack, frame_union, gen_delete, gen_dyck, gen_dyck_shuffle, gen_eca_sequence,
    gen_identity, gen_reverse, gen_set, gen_sort, gen_stack, gen_union, generate, sample_stream,
    shuffle_sample,
)
from .eca import eca_step, evolve, rule_table
from .mixture import MixtureStream, mixture_stream, mixture_vocab
from .batching import pad_batch
from .io import read_dataset, write_dataset
