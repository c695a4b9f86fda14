#include <stdio.h>
#include <string.h>
#include "hitl.h"

#define CHECK(x) do { HitlStatus s_ = (x); if (s_ != HITL_STATUS_OK) { \
    fprintf(stderr, "%s -> %d: %s\n", #x, (int)s_, hitl_last_error()); return 1; } } while (0)

int main(void) {
    HitlRepository *repo = NULL;
    char *kid = NULL;
    char *json = NULL;
    size_t n = 0;
    double score = 0.0;

    CHECK(hitl_repository_new("c", &repo));
    CHECK(hitl_repository_add(repo, "rule", "exact pinyin match", 0, &kid));
    CHECK(hitl_repository_len(repo, &n));
    if (n != 1) return 2;
    CHECK(hitl_repository_transition(repo, kid, "PotentiallyOutdated", "contradicts", NULL, false, 5));
    if (hitl_repository_transition(repo, "missing", "Valid", "consistent", NULL, true, 5) != HITL_STATUS_UNKNOWN_KID)
        return 3;
    CHECK(hitl_repository_to_json(repo, &json));
    if (strstr(json, "PotentiallyOutdated") == NULL) return 4;
    CHECK(hitl_composite_score(HITL_ITEM_VALID, 0.5, 0.0, 0, 0.25, &score));
    if (score != 0.25) return 5;
    printf("ok %s\n", kid);
    hitl_string_free(kid);
    hitl_string_free(json);
    hitl_repository_free(repo);
    return 0;
}
