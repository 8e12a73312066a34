from .model import (NULL, TOP, IllegalActionError, NullParser, SLMError, SLModel, adjoin_left,
                    adjoin_right, derivation_tree, init_from_treebank, replay, tree_derivation,
                    trigram_equivalent_model)
from .reestimate import nbest_loglik, reestimate, reestimate_iterations
from .search import (Beams, ParsePrefix, SearchError, advance, apply_action, best_parse,
                     complete_parses, extend_with_word, posterior_weights, prune,
                     slm_ppl, slm_sentence_logprob, slm_word_logprob, slm_word_prob)

__all__ = [
    "NULL", "TOP", "IllegalActionError", "NullParser", "SLMError", "SLModel", "adjoin_left",
    "adjoin_right", "derivation_tree", "init_from_treebank", "replay", "tree_derivation",
    "trigram_equivalent_model", "nbest_loglik", "reestimate", "reestimate_iterations", "Beams",
    "ParsePrefix", "SearchError", "advance", "apply_action", "best_parse", "complete_parses",
    "extend_with_word", "posterior_weights", "prune", "slm_ppl", "slm_sentence_logprob",
    "slm_word_logprob", "slm_word_prob",
]
