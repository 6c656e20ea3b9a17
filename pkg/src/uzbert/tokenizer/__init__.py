from .morph import SuffixFsm, build_fsm, default_fsm, join_morphemes, load_fsm, segment_morph
from .wordpiece import (
    CLS,
    CLS_ID,
    MASK,
    MASK_ID,
    NUM_SPECIAL,
    PAD,
    PAD_ID,
    SEP,
    SEP_ID,
    SPECIAL_TOKENS,
    UNK,
    UNK_ID,
    TokenizerConfig,
    TokenizerError,
    Vocabulary,
    build_pair_input,
    coverage,
    decode,
    encode_text,
    encode_word,
    tokenize_word,
    train_wordpiece,
    truncate_pair,
)
