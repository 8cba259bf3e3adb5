#include <linux/module.h>
#include <linux/kernel.h>

static int __init hello_mod_init(void)
{
	pr_info("Hello from hello-mod\n");
	return 0;
}

static void __exit hello_mod_exit(void)
{
	pr_info("Goodbye from hello-mod\n");
}

module_init(hello_mod_init);
module_exit(hello_mod_exit);
MODULE_LICENSE("GPL");
