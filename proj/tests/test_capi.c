#include <stdio.h>
#include <string.h>

#include "wearmil/wearmil.h"

static int failures = 0;

#define EXPECT(cond)                                              \
    do {                                                          \
        if (!(cond)) {                                            \
            fprintf(stderr, "%s:%d: %s\n", __FILE__, __LINE__, #cond); \
            ++failures;                                           \
        }                                                         \
    } while (0)

int main(void) {
    wm_config* cfg = NULL;
    char* json = NULL;
    wm_bag* bag = NULL;

    EXPECT(strcmp(wm_version(), "0.1.0") == 0);
    EXPECT(wm_config_new(&cfg) == WM_OK);
    EXPECT(wm_config_set(cfg, "train.lr0", "0.002") == WM_OK);
    EXPECT(wm_config_set(cfg, "train.bogus", "1") == WM_ERR_CONFIG);
    EXPECT(strstr(wm_last_error(), "train.bogus") != NULL);
    EXPECT(wm_config_to_json(cfg, &json) == WM_OK);
    EXPECT(json && strstr(json, "0.002") != NULL);
    wm_string_free(json);
    wm_config_free(cfg);

    cfg = NULL;
    EXPECT(wm_config_parse("{\"seed\": 3, \"unknown\": 1}", &cfg) == WM_ERR_CONFIG);
    EXPECT(cfg == NULL);
    EXPECT(wm_config_parse("{\"seed\": 3}", &cfg) == WM_OK);
    EXPECT(wm_bag_read("/nonexistent/x.wmb", &bag) == WM_ERR_DATA);
    EXPECT(wm_simulate(NULL, "/tmp", NULL) == WM_ERR_ARGUMENT);
    EXPECT(strcmp(wm_status_name(WM_ERR_FORMAT), "") != 0);
    wm_config_free(cfg);

    if (failures == 0) printf("capi: all checks passed\n");
    return failures == 0 ? 0 : 1;
}
