int bar(const int *a);

int foo(int a[]) {
    int x = bar(a);
    if (x > 0) {
        a[x] = 0;
    }
    return x;
}

int main() {
    int a[64];
    #pragma omp target teams distribute parallel for
    for (int i = 0; i < 64; i++) {
        a[i] = 63 - i;
    }
    int r = foo(a);
    #pragma omp target teams distribute parallel for
    for (int i = 0; i < 64; i++) {
        a[i] += r;
    }
    return a[1];
}
