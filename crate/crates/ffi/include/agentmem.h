#ifndef AGENTMEM_H
#define AGENTMEM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AgentmemStatus {
  AGENTMEM_STATUS_OK = 0,
  AGENTMEM_STATUS_NULL_POINTER = 1,
  AGENTMEM_STATUS_INVALID_UTF8 = 2,
  AGENTMEM_STATUS_CONFIG = 3,
  AGENTMEM_STATUS_ENGINE = 4,
  AGENTMEM_STATUS_BACKEND = 5,
  AGENTMEM_STATUS_STORAGE = 6,
  AGENTMEM_STATUS_INVALID_TIMESTAMP = 7,
  AGENTMEM_STATUS_PANIC = 8,
} AgentmemStatus;

/**
 * Opaque engine handle.
 */
typedef struct AgentmemEngine AgentmemEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Create an engine for `conversation_id`. `config_toml` may be null for
 * defaults (mock backend).
 *
 * # Safety
 * String arguments must be null or valid NUL-terminated strings; `out`
 * must be writable.
 */
enum AgentmemStatus agentmem_engine_new(const char *conversation_id,
                                        const char *config_toml,
                                        struct AgentmemEngine **out);

/**
 * Load an engine from a persistence directory.
 *
 * # Safety
 * As [`agentmem_engine_new`].
 */
enum AgentmemStatus agentmem_engine_load(const char *dir,
                                         const char *config_toml,
                                         struct AgentmemEngine **out);

/**
 * # Safety
 * `engine` must come from this library and not be used afterwards. Null is
 * a no-op.
 */
void agentmem_engine_free(struct AgentmemEngine *engine);

/**
 * Ingest one message. `timestamp_ms` is Unix time in milliseconds.
 *
 * # Safety
 * `engine` must be a live handle; strings as in [`agentmem_engine_new`].
 */
enum AgentmemStatus agentmem_ingest(struct AgentmemEngine *engine,
                                    const char *speaker,
                                    const char *text,
                                    int64_t timestamp_ms);

/**
 * Answer a question. `*out_json` receives `{answer, hits, usage}`.
 *
 * # Safety
 * `engine` must be a live handle; `out_json` writable.
 */
enum AgentmemStatus agentmem_answer(struct AgentmemEngine *engine,
                                    const char *question,
                                    char **out_json);

/**
 * Rendered retrieval context for a question, without generating.
 *
 * # Safety
 * As [`agentmem_answer`].
 */
enum AgentmemStatus agentmem_retrieve(struct AgentmemEngine *engine,
                                      const char *question,
                                      char **out_context);

/**
 * Write the engine to a persistence directory.
 *
 * # Safety
 * As [`agentmem_ingest`].
 */
enum AgentmemStatus agentmem_engine_save(struct AgentmemEngine *engine, const char *dir);

/**
 * Number of messages ingested so far, or -1 for a null handle.
 *
 * # Safety
 * `engine` must be null or a live handle.
 */
int64_t agentmem_engine_message_count(const struct AgentmemEngine *engine);

/**
 * Message of the last failed call on this thread, or null. Owned by the
 * library and valid until the next call on this thread.
 */
const char *agentmem_last_error(void);

/**
 * # Safety
 * `s` must come from this library, or be null.
 */
void agentmem_string_free(char *s);

/**
 * Static version string.
 */
const char *agentmem_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AGENTMEM_H */
