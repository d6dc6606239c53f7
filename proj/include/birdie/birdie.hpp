#pragma once

#include "decoder.hpp"
#include "embedding.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "incremental.hpp"
#include "kmeans.hpp"
#include "memory_hub.hpp"
#include "persist.hpp"
#include "query_gen.hpp"
#include "rng.hpp"
#include "semantic_tree.hpp"
#include "synthetic.hpp"
#include "table.hpp"
#include "trie.hpp"
